//! Dataset-level orchestration behind the command line: tracking many
//! sequences, writing outputs, evaluating, sweeping and reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DetectorConfig, PolicyKind, RunConfig};
use crate::cost::{ledger_csv, CostLedger};
use crate::error::{Error, Result};
use crate::io::{
    load_sequence, read_results, rows_by_frame, write_results, DetectionSource, DiskFrames, FileDetections,
    OracleDetections, SequenceBundle,
};
use crate::metrics::{evaluate, metrics_csv, EvalConfig, MetricsReport};
use crate::scheduler::{
    format_decision_log, parse_decision_log, run_sequence, Action, RunOptions, SequenceRun, SkipPolicy,
};
use crate::similarity::Measure;

/// Name used for rows pooled over all sequences.
pub const COMBINED: &str = "COMBINED";

#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    pub name: String,
    pub length: usize,
    pub policy: SkipPolicy,
    pub run: SequenceRun,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(format!("creating {}", parent.display()), e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Sequence directories under `data`: the named ones, or every child
/// directory holding a `seqinfo.ini`, sorted by name.
pub fn discover_sequences(data: &Path, names: &[String]) -> Result<Vec<PathBuf>> {
    if !names.is_empty() {
        return names
            .iter()
            .map(|n| {
                let dir = data.join(n);
                if dir.join("seqinfo.ini").is_file() {
                    Ok(dir)
                } else {
                    Err(Error::MissingSeqInfo(dir))
                }
            })
            .collect();
    }
    let entries = fs::read_dir(data).map_err(|e| Error::io(format!("listing {}", data.display()), e))?;
    let mut dirs: Vec<PathBuf> = entries
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.join("seqinfo.ini").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::InvalidConfig(format!("no sequences found under {}", data.display())));
    }
    Ok(dirs)
}

pub fn track_sequence(bundle: &SequenceBundle, config: &RunConfig) -> Result<SequenceOutcome> {
    let policy = config.policy.resolve(bundle.info.fps)?;
    let options = RunOptions {
        skip_box_source: config.skip_box_source,
        cost: config.cost.mode(),
    };
    let mut detections: Box<dyn DetectionSource + '_> = match &config.detector {
        DetectorConfig::File => Box::new(FileDetections::new(&bundle.detections_by_frame, bundle.len())),
        DetectorConfig::Oracle(o) => {
            let mut o = *o;
            o.seed = o.seed.wrapping_add(config.sequence_seed(bundle.name()));
            Box::new(OracleDetections::for_bundle(bundle, o)?)
        }
    };
    let mut frames = DiskFrames::new(bundle);
    log::info!("tracking {} ({} frames) with {}", bundle.name(), bundle.len(), policy.label());
    let run = run_sequence(&mut frames, detections.as_mut(), &policy, &config.tracker, &options)?;
    log::info!(
        "{}: {} detector calls, {} skipped",
        bundle.name(),
        run.detector_calls,
        run.frames_skipped()
    );
    Ok(SequenceOutcome {
        name: bundle.name().to_string(),
        length: bundle.len(),
        policy,
        run,
    })
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Loads and tracks every selected sequence, up to `config.jobs` at a time.
/// Output order follows the sequence order.
pub fn track_dataset(config: &RunConfig) -> Result<Vec<SequenceOutcome>> {
    config.validate()?;
    let dirs = discover_sequences(&config.data, &config.sequences)?;
    with_pool(config.jobs, || {
        dirs.par_iter()
            .map(|d| track_sequence(&load_sequence(d)?, config))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Writes `results/<seq>.txt`, `decisions/<seq>.csv`, `cost_ledger.csv` and
/// the archived `config.toml` under `config.out`.
pub fn write_track_outputs(config: &RunConfig, outcomes: &[SequenceOutcome]) -> Result<()> {
    let out = &config.out;
    for o in outcomes {
        write_results(&out.join("results").join(format!("{}.txt", o.name)), &o.run.rows)?;
        write_file(
            &out.join("decisions").join(format!("{}.csv", o.name)),
            &format_decision_log(&o.run.decisions),
        )?;
    }
    let mut total = CostLedger::default();
    for o in outcomes {
        total.merge(&o.run.ledger);
    }
    let mut rows: Vec<(&str, &CostLedger)> = outcomes.iter().map(|o| (o.name.as_str(), &o.run.ledger)).collect();
    rows.push((COMBINED, &total));
    write_file(&out.join("cost_ledger.csv"), &ledger_csv(rows))?;
    write_file(&out.join("config.toml"), &config.to_toml()?)
}

fn skipped_frames(decisions: &Path) -> Result<Option<usize>> {
    if !decisions.is_file() {
        return Ok(None);
    }
    let text = fs::read_to_string(decisions).map_err(|e| Error::io(format!("reading {}", decisions.display()), e))?;
    let log = parse_decision_log(&text, decisions)?;
    Ok(Some(log.iter().filter(|d| d.action == Action::Skip).count()))
}

/// Evaluates `results_dir/<seq>.txt` against each sequence's ground truth.
/// Skip counts come from `decisions_dir/<seq>.csv` when present. A pooled
/// row named [`COMBINED`] is appended.
pub fn evaluate_dataset(
    data: &Path,
    sequences: &[String],
    results_dir: &Path,
    decisions_dir: Option<&Path>,
    eval: &EvalConfig,
) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for dir in discover_sequences(data, sequences)? {
        let bundle = load_sequence(&dir)?;
        let gt = bundle.evaluation_gt()?;
        let rows = read_results(&results_dir.join(format!("{}.txt", bundle.name())))?;
        let skipped = match decisions_dir {
            Some(d) => skipped_frames(&d.join(format!("{}.csv", bundle.name())))?.unwrap_or(0),
            None => 0,
        };
        reports.push(evaluate(
            bundle.name(),
            &gt,
            &rows_by_frame(&rows),
            eval,
            bundle.len(),
            skipped,
        ));
    }
    let pooled = MetricsReport::pooled(COMBINED, &reports);
    reports.push(pooled);
    Ok(reports)
}

pub fn write_metrics(out: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_file(&out.join("metrics.csv"), &metrics_csv(reports))?;
    let json = serde_json::to_string_pretty(reports).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_file(&out.join("metrics.json"), &json)
}

/// A parameter sweep: one parameter name and the values to try.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub param: String,
    pub values: Vec<String>,
}

pub const SWEEP_PARAMS: [&str; 6] = ["pattern", "omega", "ncc-threshold", "hog-threshold", "eigen-threshold", "k"];

impl std::str::FromStr for SweepGrid {
    type Err = Error;

    /// Parses `name=v1,v2,...`.
    fn from_str(s: &str) -> Result<Self> {
        let (param, values) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("sweep grid {s:?} is not name=v1,v2,...")))?;
        let param = param.trim().to_ascii_lowercase().replace('_', "-");
        if !SWEEP_PARAMS.contains(&param.as_str()) {
            return Err(Error::InvalidConfig(format!(
                "unknown sweep parameter {param:?}; expected one of {}",
                SWEEP_PARAMS.join(", ")
            )));
        }
        let values: Vec<String> = values
            .split(',')
            .map(str::trim)
            .filter(|v| !v.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(Error::InvalidConfig(format!("sweep grid for {param} is empty")));
        }
        Ok(Self { param, values })
    }
}

fn number<T: std::str::FromStr>(param: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{param} value {v:?} is not a number")))
}

/// The configuration for one grid point.
pub fn apply_grid_value(base: &RunConfig, param: &str, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    let p = &mut cfg.policy;
    match param {
        "pattern" => {
            p.kind = PolicyKind::Periodic;
            p.pattern = Some(value.parse()?);
        }
        "omega" => {
            p.kind = PolicyKind::Periodic;
            p.pattern = None;
            p.omega = Some(number(param, value)?);
        }
        "ncc-threshold" => {
            p.kind = PolicyKind::ContextAware;
            p.similarity.measure = Measure::Ncc;
            p.similarity.ncc_threshold = number(param, value)?;
        }
        "hog-threshold" => {
            p.kind = PolicyKind::ContextAware;
            p.similarity.measure = Measure::Hog;
            p.similarity.hog_threshold = number(param, value)?;
        }
        "eigen-threshold" => {
            p.kind = PolicyKind::ContextAware;
            p.similarity.measure = Measure::Eigen;
            p.similarity.eigen_threshold = Some(number(param, value)?);
        }
        "k" => {
            p.kind = PolicyKind::ContextAware;
            p.k = Some(number(param, value)?);
        }
        other => return Err(Error::InvalidConfig(format!("unknown sweep parameter {other:?}"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: String,
    pub value: String,
    pub mota: Option<f64>,
    pub idf1: f64,
    pub hota: f64,
    pub detector_calls: usize,
    pub skip_pct: f64,
    /// Policy time over detect-every-frame time.
    pub speedup: f64,
    /// Frames per second under the cost model.
    pub fps: f64,
}

/// Runs tracking for every grid value and evaluates against ground truth.
pub fn sweep(base: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepPoint>> {
    let mut points = Vec::new();
    for value in &grid.values {
        let cfg = apply_grid_value(base, &grid.param, value)?;
        let outcomes = track_dataset(&cfg)?;
        let dirs = discover_sequences(&cfg.data, &cfg.sequences)?;
        let mut reports = Vec::new();
        let mut ledger = CostLedger::default();
        let mut calls = 0;
        for (o, dir) in outcomes.iter().zip(&dirs) {
            let bundle = load_sequence(dir)?;
            let gt = bundle.evaluation_gt()?;
            reports.push(evaluate(
                &o.name,
                &gt,
                &rows_by_frame(&o.run.rows),
                &cfg.eval,
                o.length,
                o.run.frames_skipped(),
            ));
            ledger.merge(&o.run.ledger);
            calls += o.run.detector_calls;
        }
        let pooled = MetricsReport::pooled(COMBINED, &reports);
        points.push(SweepPoint {
            param: grid.param.clone(),
            value: value.clone(),
            mota: pooled.mota,
            idf1: pooled.idf1,
            hota: pooled.hota,
            detector_calls: calls,
            skip_pct: pooled.skip_pct(),
            speedup: ledger.speedup_vs_noskip(),
            fps: fps(&ledger),
        });
    }
    Ok(points)
}

fn fps(ledger: &CostLedger) -> f64 {
    if ledger.total_time > 0.0 {
        ledger.n_frames as f64 / ledger.total_time
    } else {
        f64::NAN
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|m| format!("{m:.6}")).unwrap_or_else(|| "nan".into())
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("param,value,MOTA,IDF1,HOTA,DetectorCalls,SkipPct,Speedup,FPS\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{},{:.2},{:.6},{:.3}",
            p.param,
            p.value,
            opt(p.mota),
            p.idf1,
            p.hota,
            p.detector_calls,
            p.skip_pct,
            p.speedup,
            p.fps
        );
    }
    out
}

pub fn write_sweep(out: &Path, points: &[SweepPoint]) -> Result<()> {
    write_file(&out.join("sweep.csv"), &sweep_csv(points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub sequence: String,
    pub n_frames: usize,
    pub n_skipped: usize,
    pub skip_pct: f64,
    pub speedup: f64,
    pub fps: f64,
}

/// Reads a `cost_ledger.csv` written by `track`.
pub fn read_ledger(path: &Path) -> Result<BTreeMap<String, CostLedger>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let malformed = |line: usize, reason: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() < 5 {
            return Err(malformed(i + 1, format!("expected 6 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| malformed(i + 1, format!("{s:?} is not a count")));
        let n_frames = int(f[1])?;
        let total_time: f64 = f[4]
            .parse()
            .map_err(|_| malformed(i + 1, format!("{:?} is not a number", f[4])))?;
        let speedup: f64 = f.get(5).and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
        out.insert(
            f[0].to_string(),
            CostLedger {
                n_frames,
                n_detected: int(f[2])?,
                n_skipped: int(f[3])?,
                total_time,
                baseline_time: total_time / speedup,
            },
        );
    }
    Ok(out)
}

pub fn report_rows(ledgers: &BTreeMap<String, CostLedger>) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = ledgers
        .iter()
        .map(|(name, l)| ReportRow {
            sequence: name.clone(),
            n_frames: l.n_frames,
            n_skipped: l.n_skipped,
            skip_pct: 100.0 * l.skip_fraction(),
            speedup: l.speedup_vs_noskip(),
            fps: fps(l),
        })
        .collect();
    // Keep the pooled row last.
    rows.sort_by_key(|r| r.sequence == COMBINED);
    rows
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("sequence,n_frames,n_skipped,skip_pct,speedup,fps\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{:.6},{:.3}",
            r.sequence, r.n_frames, r.n_skipped, r.skip_pct, r.speedup, r.fps
        );
    }
    out
}

pub fn write_report(out: &Path, rows: &[ReportRow]) -> Result<()> {
    write_file(&out.join("report.csv"), &report_csv(rows))?;
    let json = serde_json::to_string_pretty(rows).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_file(&out.join("report.json"), &json)
}
