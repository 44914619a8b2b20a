use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use skiptrack::config::{CostConfig, DetectorConfig, PolicyKind, RunConfig};
use skiptrack::io::OracleConfig;
use skiptrack::metrics::{EvalConfig, MetricsTable};
use skiptrack::pipeline::{
    evaluate_dataset, read_ledger, report_csv, report_rows, sweep, sweep_csv, track_dataset, write_metrics,
    write_report, write_sweep, write_track_outputs, SweepGrid,
};
use skiptrack::similarity::{EigenAggregation, Measure};
use skiptrack::synth::{write_sequence, Scene, SceneConfig};
use skiptrack::tracker::SkipBoxSource;
use skiptrack::Result;

#[derive(Parser)]
#[command(name = "skiptrack", version, about = "Multi-object tracking with context-aware detector skipping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track sequences and write results, decision logs and the cost ledger.
    Track(RunArgs),
    /// Score tracking results against ground truth.
    Eval(EvalArgs),
    /// Track and score over a grid of one parameter.
    Sweep(SweepArgs),
    /// Summarize a cost ledger as fps, skip percentage and speedup.
    Report(ReportArgs),
    /// Generate synthetic sequences in MOTChallenge layout.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Noskip,
    Periodic,
    Alternate,
    ContextAware,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Ncc,
    Hog,
    Eigen,
}

#[derive(Clone, Copy, ValueEnum)]
enum EigenAggArg {
    Mean,
    Sum,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoxSourceArg {
    Reuse,
    Kalman,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetSourceArg {
    File,
    Oracle,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with one sub-directory per sequence.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Comma-separated sequence names (default: all).
    #[arg(long, value_delimiter = ',')]
    seqs: Vec<String>,
    #[arg(long, value_enum)]
    policy: Option<PolicyArg>,
    /// Periodic pattern such as DDS.
    #[arg(long)]
    pattern: Option<String>,
    /// Periodic window: detect once every omega frames.
    #[arg(long)]
    omega: Option<usize>,
    #[arg(long, value_enum)]
    measure: Option<MeasureArg>,
    #[arg(long)]
    ncc_threshold: Option<f64>,
    #[arg(long)]
    hog_threshold: Option<f64>,
    #[arg(long)]
    eigen_threshold: Option<f64>,
    #[arg(long, value_enum)]
    eigen_agg: Option<EigenAggArg>,
    /// Forced detection at least every k frames.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_enum)]
    skip_box_source: Option<BoxSourceArg>,
    #[arg(long, value_enum)]
    det_source: Option<DetSourceArg>,
    #[arg(long)]
    oracle_sigma: Option<f64>,
    #[arg(long)]
    oracle_drop: Option<f64>,
    #[arg(long)]
    oracle_fp: Option<f64>,
    /// mot17, mot15, measured, or a TOML/JSON file with stage timings.
    #[arg(long)]
    cost_profile: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sequences processed in parallel (0 = all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig> {
        let cfg = self.build_config()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Settings without validation; a sweep validates each grid point instead.
    fn build_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = d.clone();
        }
        if !self.seqs.is_empty() {
            cfg.sequences = self.seqs.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        let p = &mut cfg.policy;
        if let Some(kind) = self.policy {
            p.kind = match kind {
                PolicyArg::Noskip => PolicyKind::NoSkip,
                PolicyArg::Periodic => PolicyKind::Periodic,
                PolicyArg::Alternate => PolicyKind::Alternate,
                PolicyArg::ContextAware => PolicyKind::ContextAware,
            };
        }
        if let Some(pattern) = &self.pattern {
            p.pattern = Some(pattern.parse()?);
        }
        if let Some(omega) = self.omega {
            p.omega = Some(omega);
            if self.pattern.is_none() {
                p.pattern = None;
            }
        }
        let s = &mut p.similarity;
        if let Some(m) = self.measure {
            s.measure = match m {
                MeasureArg::Ncc => Measure::Ncc,
                MeasureArg::Hog => Measure::Hog,
                MeasureArg::Eigen => Measure::Eigen,
            };
        }
        if let Some(t) = self.ncc_threshold {
            s.ncc_threshold = t;
        }
        if let Some(t) = self.hog_threshold {
            s.hog_threshold = t;
        }
        if let Some(t) = self.eigen_threshold {
            s.eigen_threshold = Some(t);
        }
        if let Some(a) = self.eigen_agg {
            s.eigen_aggregation = match a {
                EigenAggArg::Mean => EigenAggregation::Mean,
                EigenAggArg::Sum => EigenAggregation::Sum,
            };
        }
        if let Some(k) = self.k {
            p.k = Some(k);
        }
        if let Some(b) = self.skip_box_source {
            cfg.skip_box_source = Some(match b {
                BoxSourceArg::Reuse => SkipBoxSource::Reuse,
                BoxSourceArg::Kalman => SkipBoxSource::Kalman,
            });
        }
        match self.det_source {
            Some(DetSourceArg::File) => cfg.detector = DetectorConfig::File,
            Some(DetSourceArg::Oracle) if !matches!(cfg.detector, DetectorConfig::Oracle(_)) => {
                cfg.detector = DetectorConfig::Oracle(OracleConfig::default())
            }
            _ => {}
        }
        let oracle_flags = self.oracle_sigma.is_some() || self.oracle_drop.is_some() || self.oracle_fp.is_some();
        match &mut cfg.detector {
            DetectorConfig::Oracle(o) => {
                if let Some(v) = self.oracle_sigma {
                    o.sigma = v;
                }
                if let Some(v) = self.oracle_drop {
                    o.drop_probability = v;
                }
                if let Some(v) = self.oracle_fp {
                    o.false_positive_rate = v;
                }
            }
            DetectorConfig::File if oracle_flags => {
                log::warn!("oracle flags are ignored with --det-source file");
            }
            DetectorConfig::File => {}
        }
        if let Some(c) = &self.cost_profile {
            cfg.cost = CostConfig::from_arg(c)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, value_delimiter = ',')]
    seqs: Vec<String>,
    /// Output directory of a track run; metrics files are written here too.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Result files directory (default: <out>/results).
    #[arg(long)]
    results: Option<PathBuf>,
    /// Decision logs directory for skip statistics (default: <out>/decisions).
    #[arg(long)]
    decisions: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    iou_threshold: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Parameter grid, e.g. "pattern=D,DDS,DS,DSS" or "ncc-threshold=0.6,0.75,0.9".
    #[arg(long)]
    grid: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of a track run.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Ledger to read (default: <out>/cost_ledger.csv).
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory that receives the sequences.
    #[arg(long, default_value = "data")]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long, default_value_t = 100)]
    length: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Motionless objects on identical frames.
    #[arg(long)]
    r#static: bool,
    /// Jitter of the det.txt detections.
    #[arg(long, default_value_t = 1.0)]
    det_sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    det_drop: f64,
    #[arg(long, default_value_t = 0.0)]
    det_fp: f64,
}

fn run_track(args: &RunArgs) -> Result<()> {
    let cfg = args.to_config()?;
    let outcomes = track_dataset(&cfg)?;
    write_track_outputs(&cfg, &outcomes)?;
    for o in &outcomes {
        println!(
            "{}: {} frames, {} detector calls, {} skipped, speedup {:.3}",
            o.name,
            o.length,
            o.run.detector_calls,
            o.run.frames_skipped(),
            o.run.ledger.speedup_vs_noskip()
        );
    }
    println!("outputs written to {}", cfg.out.display());
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<()> {
    let results = args.results.clone().unwrap_or_else(|| args.out.join("results"));
    let decisions = args.decisions.clone().unwrap_or_else(|| args.out.join("decisions"));
    let eval = EvalConfig {
        iou_threshold: args.iou_threshold,
    };
    let reports = evaluate_dataset(&args.data, &args.seqs, &results, Some(&decisions), &eval)?;
    write_metrics(&args.out, &reports)?;
    print!("{}", MetricsTable(&reports));
    Ok(())
}

fn run_sweep(args: &SweepArgs) -> Result<()> {
    let grid: SweepGrid = args.grid.parse()?;
    let cfg = args.run.build_config()?;
    let points = sweep(&cfg, &grid)?;
    write_sweep(&cfg.out, &points)?;
    let csv = sweep_csv(&points);
    print!("{csv}");
    Ok(())
}

fn run_report(args: &ReportArgs) -> Result<()> {
    let ledger = args.ledger.clone().unwrap_or_else(|| args.out.join("cost_ledger.csv"));
    let rows = report_rows(&read_ledger(&ledger)?);
    write_report(&args.out, &rows)?;
    print!("{}", report_csv(&rows));
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<()> {
    for i in 0..args.count {
        let seed = args.seed.wrapping_add(i as u64);
        let cfg = if args.r#static {
            SceneConfig::static_scene(args.length, 4, seed)
        } else {
            SceneConfig {
                length: args.length,
                seed,
                ..SceneConfig::default()
            }
        };
        let scene = Scene::generate(&cfg)?;
        let oracle = OracleConfig {
            sigma: args.det_sigma,
            drop_probability: args.det_drop,
            false_positive_rate: args.det_fp,
            seed,
        };
        let dir = write_sequence(&scene, &args.out, &format!("SYN-{:02}", i + 1), Some(&oracle))?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Track(a) => run_track(a),
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::Report(a) => run_report(a),
        Command::Synth(a) => run_synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
