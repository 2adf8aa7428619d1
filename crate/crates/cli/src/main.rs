use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use viewrank_cli::commands::{cmd_evaluate, cmd_preprocess, cmd_stats, cmd_sweep, cmd_train};
use viewrank_cli::config::RunConfig;

/// Pairwise-ranking recommender trainer on purchase/view feedback.
///
/// Config precedence: command-line flag > VIEWRANK_* environment variable >
/// --config file > built-in default.
#[derive(Parser)]
#[command(name = "viewrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a raw interaction log and write a dataset snapshot.
    Preprocess(PreprocessArgs),
    /// Train a factor model on a snapshot.
    Train(TrainArgs),
    /// Evaluate a checkpoint (HR@k / NDCG@k) on a snapshot's split.
    Evaluate(EvaluateArgs),
    /// Write popularity-skewness curves for a snapshot.
    Stats(StatsArgs),
    /// Expand list-valued config fields and run one training per value.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file with flat keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed (drives init, sampling, validation draws, and the split).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Raw log: user_id,item_id,behavior,timestamp per line.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output snapshot path.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    min_user_purchases: Option<usize>,
    #[arg(long)]
    min_item_purchases: Option<usize>,
    /// Skip malformed lines instead of aborting.
    #[arg(long)]
    lenient: bool,
    /// Mark timestamps as date-only (disables session extraction).
    #[arg(long)]
    day_granular: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Output checkpoint path.
    #[arg(long = "model-out")]
    model_out: Option<PathBuf>,
    /// Output report path.
    #[arg(long = "report-out")]
    report_out: Option<PathBuf>,
    /// uniform | reduced | dns | biased | triple
    #[arg(long)]
    sampler: Option<String>,
    /// Reduced-space size ratio in (0, 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Pair-kind probabilities, e.g. 0.3,0.3,0.4
    #[arg(long)]
    omega: Option<String>,
    /// Global view weight in [0, 1].
    #[arg(long)]
    alpha: Option<f64>,
    /// Exponent of the per-user weight curve.
    #[arg(long)]
    beta: Option<f64>,
    /// global | per-user
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// fixed | adagrad
    #[arg(long = "lr-mode")]
    lr_mode: Option<String>,
    #[arg(long)]
    reg: Option<f64>,
    /// Candidate count of the dynamic sampler.
    #[arg(long = "dns-x")]
    dns_x: Option<usize>,
    /// Session gap threshold in seconds.
    #[arg(long = "session-gap")]
    session_gap: Option<i64>,
    /// Updates per epoch, or "auto" for one sweep.
    #[arg(long = "steps-per-epoch")]
    steps_per_epoch: Option<String>,
    #[arg(long = "init-scale")]
    init_scale: Option<f64>,
    /// default | exclude-purchased | exclude-observed
    #[arg(long = "negative-pool")]
    negative_pool: Option<String>,
    /// Let view-less users contribute pair updates under the triple sampler.
    #[arg(long = "quad-fallback")]
    quad_fallback: bool,
    /// Record real wall-clock seconds in the report (breaks byte-level
    /// reproducibility).
    #[arg(long = "wall-clock")]
    wall_clock: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Checkpoint to evaluate.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    /// Also evaluate a baseline: popularity
    #[arg(long)]
    baseline: Option<String>,
    /// Write the metrics rows to this file as well.
    #[arg(long = "metrics-out")]
    metrics_out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Directory for the curve files.
    #[arg(long = "out-dir")]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Config file with at least one list-valued field.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the per-run subdirectories.
    #[arg(long = "out-dir")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn push(overrides: &mut Vec<(String, String)>, key: &str, value: Option<String>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v));
    }
}

fn path_string(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Preprocess(args) => {
            let mut ov = Vec::new();
            push(&mut ov, "seed", args.common.seed.map(|s| s.to_string()));
            push(&mut ov, "raw_log", path_string(&args.input));
            push(&mut ov, "snapshot", path_string(&args.snapshot));
            push(&mut ov, "min_user_purchases", args.min_user_purchases.map(|v| v.to_string()));
            push(&mut ov, "min_item_purchases", args.min_item_purchases.map(|v| v.to_string()));
            if args.lenient {
                ov.push(("lenient_parse".to_string(), "true".to_string()));
            }
            if args.day_granular {
                ov.push(("day_granular".to_string(), "true".to_string()));
            }
            let cfg = RunConfig::load(args.common.config.as_deref(), &ov)?;
            let summary = cmd_preprocess(&cfg)?;
            println!("{summary}");
            println!("snapshot written to {}", cfg.require("snapshot")?.display());
        }
        Command::Train(args) => {
            let mut ov = Vec::new();
            push(&mut ov, "seed", args.common.seed.map(|s| s.to_string()));
            push(&mut ov, "snapshot", path_string(&args.snapshot));
            push(&mut ov, "model", path_string(&args.model_out));
            push(&mut ov, "report", path_string(&args.report_out));
            push(&mut ov, "sampler", args.sampler);
            push(&mut ov, "gamma", args.gamma.map(|v| v.to_string()));
            push(&mut ov, "omega", args.omega);
            push(&mut ov, "alpha", args.alpha.map(|v| v.to_string()));
            push(&mut ov, "beta", args.beta.map(|v| v.to_string()));
            push(&mut ov, "weighting", args.weighting);
            push(&mut ov, "k", args.k.map(|v| v.to_string()));
            push(&mut ov, "factors", args.factors.map(|v| v.to_string()));
            push(&mut ov, "epochs", args.epochs.map(|v| v.to_string()));
            push(&mut ov, "patience", args.patience.map(|v| v.to_string()));
            push(&mut ov, "lr", args.lr.map(|v| v.to_string()));
            push(&mut ov, "lr_mode", args.lr_mode);
            push(&mut ov, "reg", args.reg.map(|v| v.to_string()));
            push(&mut ov, "dns_x", args.dns_x.map(|v| v.to_string()));
            push(&mut ov, "session_gap", args.session_gap.map(|v| v.to_string()));
            push(&mut ov, "steps_per_epoch", args.steps_per_epoch);
            push(&mut ov, "init_scale", args.init_scale.map(|v| v.to_string()));
            push(&mut ov, "negative_pool", args.negative_pool);
            if args.quad_fallback {
                ov.push(("quad_fallback".to_string(), "true".to_string()));
            }
            if args.wall_clock {
                ov.push(("wall_clock".to_string(), "true".to_string()));
            }
            let cfg = RunConfig::load(args.common.config.as_deref(), &ov)?;
            let outcome = cmd_train(&cfg)?;
            println!("{outcome}");
            println!("checkpoint written to {}", cfg.require("model")?.display());
            println!("report written to {}", cfg.require("report")?.display());
        }
        Command::Evaluate(args) => {
            let mut ov = Vec::new();
            push(&mut ov, "seed", args.common.seed.map(|s| s.to_string()));
            push(&mut ov, "snapshot", path_string(&args.snapshot));
            push(&mut ov, "model", path_string(&args.model));
            push(&mut ov, "k", args.k.map(|v| v.to_string()));
            push(&mut ov, "baseline", args.baseline);
            push(&mut ov, "metrics", path_string(&args.metrics_out));
            let cfg = RunConfig::load(args.common.config.as_deref(), &ov)?;
            let rows = cmd_evaluate(&cfg)?;
            println!("model\tk\thr\tndcg");
            for row in rows {
                println!("{}\t{}\t{}\t{}", row.label, row.k, row.hr, row.ndcg);
            }
        }
        Command::Stats(args) => {
            let mut ov = Vec::new();
            push(&mut ov, "seed", args.common.seed.map(|s| s.to_string()));
            push(&mut ov, "snapshot", path_string(&args.snapshot));
            push(&mut ov, "out_dir", path_string(&args.out_dir));
            let cfg = RunConfig::load(args.common.config.as_deref(), &ov)?;
            let (purchases, views) = cmd_stats(&cfg)?;
            println!("purchase curve written to {}", purchases.display());
            println!("view curve written to {}", views.display());
        }
        Command::Sweep(args) => {
            let mut ov = Vec::new();
            push(&mut ov, "seed", args.seed.map(|s| s.to_string()));
            let outcomes = cmd_sweep(&args.config, &ov, &args.out_dir)?;
            for (name, outcome) in outcomes {
                println!("{name}: {outcome}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
