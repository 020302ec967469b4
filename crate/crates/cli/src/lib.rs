//! Subcommands of the `fastmatch` binary.

pub mod config;

use clap::{Args, Parser, Subcommand};
use fastmatch::accounting::{epochs_for, utilization, window_rows, write_summary_csv, write_window_csv, RunSummary};
use fastmatch::curricula::{cosine_lr, curriculum_batch, lambda_at, ScheduleConfig};
use fastmatch::dataio::ChannelStats;
use fastmatch::engine::{train, MetricsLine, RunLog, TrainData};
use fastmatch::scenarios::{run_federated, run_streaming};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use config::{parse_config, RunConfig};

/// Overrides the output directory of train, federated and stream runs.
pub const OUTPUT_DIR_ENV: &str = "FASTMATCH_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },
    #[error(transparent)]
    Run(#[from] fastmatch::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Analyze(String),
}

impl CliError {
    /// 2 for configuration problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Run(fastmatch::Error::Config { .. }) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(name = "fastmatch", version, about = "Semi-supervised training with curriculum batch size and pseudo labeling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Centralized training on one labeled/unlabeled split.
    Train(RunArgs),
    /// Federated training over non-iid clients.
    Federated(RunArgs),
    /// Training with unlabeled data arriving in chunks.
    Stream(RunArgs),
    /// Print the unlabeled batch size, loss weight and learning rate per iteration as CSV.
    Schedule(ScheduleArgs),
    /// Recompute utilization and epoch counts from a metrics stream.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the environment and the config file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Root seed, overriding the config file.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 0.7)]
    pub alpha: f64,
    /// Maximum unlabeled batch size.
    #[arg(long, default_value_t = 448)]
    pub u: usize,
    /// Labeled batch size.
    #[arg(long, default_value_t = 64)]
    pub l: usize,
    /// Total iterations.
    #[arg(long = "T", default_value_t = 1 << 20)]
    pub total: u64,
    #[arg(long, default_value_t = 0.03)]
    pub lr0: f64,
    #[arg(long, default_value_t = 1.0)]
    pub base_lambda: f64,
    /// Keep the unlabeled batch at `u` and the loss weight at `base_lambda`.
    #[arg(long)]
    pub no_cbs: bool,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `train` or `stream` (reads run.json and metrics.jsonl).
    #[arg(long, conflicts_with = "metrics")]
    pub run_dir: Option<PathBuf>,
    /// A metrics JSONL file.
    #[arg(long, requires = "dataset_size")]
    pub metrics: Option<PathBuf>,
    /// Distinct labeled and unlabeled samples, the epoch denominator.
    #[arg(long)]
    pub dataset_size: Option<u64>,
    /// Accuracy whose first crossing is reported as epochs to target.
    #[arg(long)]
    pub target: Option<f64>,
    #[arg(long, default_value = "unknown")]
    pub flags: String,
    /// Write the summary CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Metadata written next to the metrics of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub flags: String,
    pub dataset_size: u64,
    pub target_accuracy: Option<f64>,
    pub normalization: ChannelStats,
    pub config: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Vec<(u64, usize)>>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(a) => cmd_train(&a, false),
        Command::Stream(a) => cmd_train(&a, true),
        Command::Federated(a) => cmd_federated(&a),
        Command::Schedule(a) => cmd_schedule(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}

fn load_run_config(args: &RunArgs) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = match &args.config {
        Some(p) => parse_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    Ok((cfg, out))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(fastmatch::Error::from)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn write_summary(path: &Path, summary: &RunSummary) -> Result<(), CliError> {
    let mut f = create(path)?;
    write_summary_csv(&mut f, std::slice::from_ref(summary))?;
    f.flush().map_err(io_err(path))
}

fn cmd_train(args: &RunArgs, streaming: bool) -> Result<(), CliError> {
    let (cfg, out) = load_run_config(args)?;
    let (train_ds, test_ds, split) = cfg.load_data()?;
    let data = TrainData::new(&train_ds, &test_ds, &split);
    let tcfg = cfg.train_config();
    let metrics_path = out.join("metrics.jsonl");
    let mut sink = create(&metrics_path)?;
    let (log, visibility): (RunLog, _) = if streaming {
        let s = run_streaming(&tcfg, &cfg.stream, &data, Some(&mut sink))?;
        (s.run, Some(s.visibility))
    } else {
        (train(&tcfg, &data, Some(&mut sink))?, None)
    };
    sink.flush().map_err(io_err(&metrics_path))?;
    let meta = RunMeta {
        flags: log.flags.clone(),
        dataset_size: split.distinct_samples() as u64,
        target_accuracy: tcfg.target_accuracy,
        normalization: data.norm.clone(),
        config: cfg.clone(),
        visibility,
    };
    write_json(&out.join("run.json"), &meta)?;
    let summary = log.summary()?;
    write_summary(&out.join("summary.csv"), &summary)?;
    let window_path = out.join("window.csv");
    let mut w = create(&window_path)?;
    write_window_csv(&mut w, &window_rows(&log.counts))?;
    w.flush().map_err(io_err(&window_path))?;
    println!(
        "{}: {} iterations, final accuracy {:.4}, {} forward + {} backward passes, {:.2} epochs",
        summary.flags,
        log.counts.len(),
        log.final_accuracy().unwrap_or(f64::NAN),
        summary.total_forward,
        summary.total_backward,
        summary.epochs
    );
    Ok(())
}

fn cmd_federated(args: &RunArgs) -> Result<(), CliError> {
    let (cfg, out) = load_run_config(args)?;
    let (train_ds, test_ds, split) = cfg.load_data()?;
    let data = TrainData::new(&train_ds, &test_ds, &split);
    let path = out.join("rounds.jsonl");
    let mut sink = create(&path)?;
    let log = run_federated(&cfg.federated_config(), &cfg.train_config(), &data, Some(&mut sink))?;
    sink.flush().map_err(io_err(&path))?;
    let summary = log.summary();
    write_summary(&out.join("summary.csv"), &summary)?;
    println!(
        "{}: {} rounds, final accuracy {:.4}, {:.2} epochs",
        summary.flags,
        log.rounds.len(),
        log.final_accuracy().unwrap_or(f64::NAN),
        summary.epochs
    );
    Ok(())
}

/// Rows `t = 0 … T` of the schedule.
pub fn schedule_rows(a: &ScheduleArgs) -> Result<Vec<(u64, usize, f64, f64)>, CliError> {
    if a.l == 0 {
        return Err(CliError::Config {
            key: "l".into(),
            message: "must be at least 1".into(),
        });
    }
    let sched = ScheduleConfig {
        l: a.l,
        mu: 1,
        total_iterations: a.total,
        alpha: a.alpha,
        cbs_enabled: !a.no_cbs,
        base_lambda: a.base_lambda,
    };
    sched.validate().map_err(|e| match e {
        fastmatch::Error::Config { key, message } => CliError::Config { key, message },
        other => CliError::Run(other),
    })?;
    (0..=a.total)
        .map(|t| {
            let u_t = if a.no_cbs { a.u } else { curriculum_batch(a.u, t, a.total, a.alpha)? };
            let lambda = lambda_at(&sched, u_t);
            Ok((t, u_t, lambda, cosine_lr(a.lr0, t, a.total)))
        })
        .collect()
}

fn cmd_schedule(a: &ScheduleArgs) -> Result<(), CliError> {
    let rows = schedule_rows(a)?;
    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    };
    let fail = |e: std::io::Error| CliError::Io {
        path: "schedule output".into(),
        source: e,
    };
    writeln!(out, "t,u_t,lambda_t,lr_t").map_err(fail)?;
    for (t, u_t, lambda, lr) in rows {
        writeln!(out, "{t},{u_t},{lambda},{lr}").map_err(fail)?;
    }
    out.flush().map_err(fail)
}

/// Summary of a metrics stream, computed from its integer counters.
pub fn analyze_stream(
    reader: impl BufRead,
    dataset_size: u64,
    target: Option<f64>,
    flags: &str,
) -> Result<RunSummary, CliError> {
    let mut counts = Vec::new();
    let mut passes_at = std::collections::HashMap::new();
    let (mut fwd, mut bwd) = (0u64, 0u64);
    let mut epochs_to_target = None;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| CliError::Analyze(format!("line {}: {e}", n + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsLine =
            serde_json::from_str(&line).map_err(|e| CliError::Analyze(format!("line {}: {e}", n + 1)))?;
        match rec {
            MetricsLine::Step(s) => {
                counts.push(s.counts());
                fwd = s.fwd_total;
                bwd = s.bwd_total;
                passes_at.insert(s.t, s.fwd_total + s.bwd_total);
            }
            MetricsLine::Eval(e) => {
                if epochs_to_target.is_none() && target.is_some_and(|a| e.accuracy >= a) {
                    let passes = passes_at
                        .get(&e.t)
                        .ok_or_else(|| CliError::Analyze(format!("evaluation at t={} precedes its step", e.t)))?;
                    epochs_to_target = Some(epochs_for(*passes, dataset_size));
                }
            }
        }
    }
    if counts.is_empty() {
        return Err(CliError::Analyze("no step records".into()));
    }
    Ok(RunSummary {
        flags: flags.to_string(),
        total_forward: fwd,
        total_backward: bwd,
        epochs: epochs_for(fwd + bwd, dataset_size),
        total_utilization: utilization(&counts)?.total,
        epochs_to_target,
    })
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<(), CliError> {
    let (metrics, size, target, flags) = match (&a.run_dir, &a.metrics) {
        (Some(dir), _) => {
            let meta_path = dir.join("run.json");
            let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
            let meta: RunMeta = serde_json::from_str(&text).map_err(|e| CliError::Analyze(format!("run.json: {e}")))?;
            (
                dir.join("metrics.jsonl"),
                a.dataset_size.unwrap_or(meta.dataset_size),
                a.target.or(meta.target_accuracy),
                meta.flags,
            )
        }
        (None, Some(m)) => (
            m.clone(),
            a.dataset_size.expect("required by clap"),
            a.target,
            a.flags.clone(),
        ),
        (None, None) => {
            return Err(CliError::Config {
                key: "analyze".into(),
                message: "pass --run-dir or --metrics".into(),
            })
        }
    };
    if size == 0 {
        return Err(CliError::Config {
            key: "dataset_size".into(),
            message: "must be positive".into(),
        });
    }
    let file = File::open(&metrics).map_err(io_err(&metrics))?;
    let summary = analyze_stream(BufReader::new(file), size, target, &flags)?;
    match &a.out {
        Some(p) => write_summary(p, &summary),
        None => {
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, std::slice::from_ref(&summary))?;
            std::io::stdout().write_all(&buf).map_err(|e| CliError::Io {
                path: "stdout".into(),
                source: e,
            })
        }
    }
}
