//! `affordance`: synthetic data, splits, training, grid search, evaluation,
//! reports and the end-to-end reproduction sweep.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error(transparent)]
    Core(#[from] tool_affordance::Error),
}

impl CliError {
    /// 2 for usage or configuration problems, 1 for failures during work.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_config() => 2,
            _ => 1,
        }
    }
}

/// Environment variable naming the default dataset root.
pub const DATA_ROOT_ENV: &str = "AFFORDANCE_DATA_ROOT";

#[derive(Debug, Parser)]
#[command(name = "affordance", version, about = "Tool and action recognition from before/after camera images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with manifest and generator settings.
    Synth(SynthArgs),
    /// Split a dataset 6:2:2 per (object, tool, action) group.
    Split(SplitArgs),
    /// Train one model and write its run directory.
    Train(TrainArgs),
    /// Grid search over learning rate, batch size and first-block shape.
    Grid(GridArgs),
    /// Evaluate a checkpoint on a labelled manifest.
    Eval(EvalArgs),
    /// Aggregate evaluation results into a table and confusion matrices.
    Report(ReportArgs),
    /// Synthesize, split, train every architecture over several seeds and report.
    Repro(ReproArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub objects: u32,
    #[arg(long, default_value_t = 10)]
    pub reps: u32,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Dataset root or manifest file (default: $AFFORDANCE_DATA_ROOT).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test repetitions per group.
    #[arg(long, default_value = "6,2,2")]
    pub ratios: String,
}

/// Task, architecture and backbone selection shared by several subcommands.
#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// TOML file with defaults for these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// tools, tools-no-action, tools+actions, actions or joint16.
    #[arg(long)]
    pub task: Option<String>,
    /// 3c1n, 3c6n, 3c3n, 1c2n or 1c1n.
    #[arg(long)]
    pub arch: Option<String>,
    /// resnet18, resnet50, resnet101 or tiny.
    #[arg(long)]
    pub backbone: Option<String>,
    /// First-block kernel size (3, 5 or 7).
    #[arg(long)]
    pub kernel: Option<usize>,
    /// First-block stride (1 or 2).
    #[arg(long)]
    pub stride: Option<usize>,
    /// Base channel width of the tiny backbone.
    #[arg(long)]
    pub tiny_width: Option<usize>,
    /// Embedding size of the tiny backbone.
    #[arg(long)]
    pub embedding_dim: Option<usize>,
    /// Dataset root (default: $AFFORDANCE_DATA_ROOT).
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run directory (default: runs/<arch>_<backbone>_<task>_seed<seed>).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Search 2 learning rates × 2 batch sizes instead of the full 72 points.
    #[arg(long)]
    pub reduced: bool,
    /// Epochs per trial (default 150, or 5 with --reduced).
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Trials trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "grid_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint file; the `.ckpt` extension may be omitted.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Manifest file, split name such as `data/test`, or dataset root.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Override the task stored in the checkpoint.
    #[arg(long)]
    pub task: Option<String>,
    /// Output directory (default: next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// `eval.json` files written by `eval`.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReproArgs {
    /// Three residual backbones, five seeds, 150 epochs. Takes days on a CPU.
    #[arg(long)]
    pub full: bool,
    /// Number of seeds, 0..N.
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub objects: Option<u32>,
    #[arg(long)]
    pub reps: Option<u32>,
    /// Skip the dual-head versus 16-way comparison.
    #[arg(long)]
    pub no_ablation: bool,
    /// Seed runs trained concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = "repro_out")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Grid(a) => commands::grid(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
        Command::Repro(a) => commands::repro(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
