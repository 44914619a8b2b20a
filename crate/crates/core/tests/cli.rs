use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn skiptrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skiptrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = skiptrack(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_track_eval_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    ok(&["synth", "--out", p(&data), "--count", "2", "--length", "30", "--seed", "4"]);
    assert!(data.join("SYN-01/seqinfo.ini").is_file());
    assert!(data.join("SYN-02/det/det.txt").is_file());

    ok(&["track", "--data", p(&data), "--out", p(&out), "--policy", "context-aware", "--k", "4"]);
    for f in ["results/SYN-01.txt", "results/SYN-02.txt", "decisions/SYN-01.csv", "cost_ledger.csv", "config.toml"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let ledger = fs::read_to_string(out.join("cost_ledger.csv")).unwrap();
    assert!(ledger.lines().last().unwrap().starts_with("COMBINED,60,"));

    let table = ok(&["eval", "--data", p(&data), "--out", p(&out)]);
    assert!(table.contains("SYN-01") && table.contains("COMBINED"));
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("sequence,MOTA,MOTP,IDF1"));
    assert_eq!(metrics.lines().count(), 4);
    assert!(out.join("metrics.json").is_file());

    let report = ok(&["report", "--out", p(&out)]);
    assert!(report.contains("COMBINED"));
    assert!(out.join("report.csv").is_file() && out.join("report.json").is_file());
}

#[test]
fn track_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["synth", "--out", p(&data), "--count", "1", "--length", "25", "--det-fp", "0.1"]);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok(&["track", "--data", p(&data), "--out", p(&out), "--det-source", "oracle", "--oracle-sigma", "2", "--seed", "9"]);
        outputs.push((
            fs::read(out.join("results/SYN-01.txt")).unwrap(),
            fs::read(out.join("decisions/SYN-01.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    ok(&["synth", "--out", p(&data), "--count", "1", "--length", "20"]);
    let csv = ok(&["sweep", "--data", p(&data), "--out", p(&out), "--policy", "periodic", "--grid", "pattern=D,DS,DSS"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4, "{csv}");
    assert!(lines[1].starts_with("pattern,D,") && lines[3].starts_with("pattern,DSS,"));
}

#[test]
fn bad_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = skiptrack(&["sweep", "--data", p(dir.path()), "--grid", "omega="]);
    assert!(!out.status.success());
    let out = skiptrack(&["sweep", "--data", p(dir.path()), "--grid", "speed=1,2"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    let out = skiptrack(&["track", "--data", p(&dir.path().join("missing"))]);
    assert!(!out.status.success());
}
