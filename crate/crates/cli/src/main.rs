use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Exit status for runtime failures; usage errors exit with 2.
const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "kanforge", version, about = "Train, prune and interpret Kolmogorov-Arnold networks on EHD pump data")]
struct Cli {
    /// Seed for every random draw (splits, initialization, synthetic data).
    #[arg(long, global = true, env = "KANFORGE_SEED", default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset generated from the closed-form pump relations.
    Gen(GenArgs),
    /// Sparse-regularized training of a fresh network.
    Train(TrainArgs),
    /// Remove weakly active hidden nodes.
    Prune(PruneArgs),
    /// Unregularized retraining of a checkpoint.
    Refine(RefineArgs),
    /// Snap every edge to a closed-form primitive and compose the formula.
    Symbolify(SymbolifyArgs),
    /// KAN, random forest and MLP on one shared split.
    Compare(CompareArgs),
    /// SVG curves of every edge, the basis functions and the network diagram.
    PlotSplines(PlotSplinesArgs),
    /// SVG line chart of a training trace.
    PlotTrace(PlotTraceArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value_t = 98)]
    n: usize,
    /// Gaussian noise sigmas as `pressure,flow`.
    #[arg(long, default_value = "3,0.05")]
    noise: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    /// Fraction of rows used for training.
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    /// Seed of the train/test split (defaults to --seed).
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = "pressure")]
    target: String,
    /// Comma-separated layer widths, e.g. `5,2,1`.
    #[arg(long)]
    width: Option<String>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    /// Weight of both the L1 and the entropy penalty.
    #[arg(long, default_value_t = 0.01)]
    lambda: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
    /// Trace CSV path (defaults to `<out>.trace.csv`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PruneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    theta: f64,
    #[arg(long)]
    out: PathBuf,
    /// Prune report path (defaults to `<out>.prune.json`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RefineArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SymbolifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output prefix; writes `<out>.txt` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Express the formula in features scaled onto [0, 1].
    #[arg(long)]
    unit_inputs: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotSplinesArgs {
    #[arg(long)]
    model: PathBuf,
    /// Optional data file; edge opacity in the network diagram then follows
    /// activation magnitude on the training rows.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlotTraceArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "training trace")]
    title: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests print to stdout and succeed.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(commands::CliError::Runtime(err)) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
