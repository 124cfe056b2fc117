//! `dvelab`: train recurrent actor-critic agents on multiple-MDP level sets,
//! evaluate checkpoints, and run the value-clustering and variance analyses.
//!
//! Exit codes: 0 success, 1 usage error, 2 configuration error, 3 runtime
//! failure (including a failed verdict from `analyze lemmas` or
//! `analyze decompose`).

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "dvelab", version, about = "Dynamic value estimation lab: training, evaluation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent from a TOML run config.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a level set.
    Eval(EvalArgs),
    /// Analysis experiments.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run config (TOML).
    pub config: PathBuf,
    /// Override a config key, e.g. `--set train.lr=1e-3`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Continue the run in the output directory from its last checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many updates in this invocation, checkpointing first.
    #[arg(long, value_name = "N")]
    pub max_updates: Option<u64>,
    /// Output directory; overrides `experiment.output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Level set, e.g. `gapworld:50` or `tabular:0..8`.
    #[arg(long)]
    pub levels: String,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub episodes: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = dvelab::envs::DEFAULT_HORIZON)]
    pub horizon: usize,
    /// Take the most likely action instead of sampling.
    #[arg(long)]
    pub greedy: bool,
    #[arg(long, default_value_t = dvelab::envs::gapworld::DEFAULT_LENGTH)]
    pub gapworld_length: usize,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Flags shared by every analysis subcommand.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Output directory; defaults to `<output root>/analyze/<subcommand>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ValueSourceArgs {
    #[arg(long, default_value = "gapworld:50")]
    pub levels: String,
    #[arg(long, default_value_t = dvelab::envs::gapworld::DEFAULT_LENGTH)]
    pub gapworld_length: usize,
    /// Estimate values by fine-tuning this checkpoint's critic per level
    /// instead of solving each level exactly under its reference policy.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyzeCommand {
    /// Per-state value clustering across levels, with histograms.
    Clusters {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: ValueSourceArgs,
        /// Comma-separated states, or `probe` for each level's probe state.
        #[arg(long, default_value = "probe")]
        states: String,
        #[arg(long, default_value_t = 5)]
        c_max: usize,
    },
    /// AIC/N curve over component counts for per-level value rows.
    Aic {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        source: ValueSourceArgs,
        /// Read the value matrix from this JSON file instead.
        #[arg(long, conflicts_with = "checkpoint")]
        matrix: Option<PathBuf>,
        /// States forming each level's row: `probe`, `all`, or a list.
        #[arg(long, default_value = "probe")]
        states: String,
        #[arg(long, default_value_t = 5)]
        c_max: usize,
        /// Independent EM seeds per component count.
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
    },
    /// Split E[ψ²] into minimal variance, prediction error and cross term.
    Decompose {
        #[command(flatten)]
        common: CommonArgs,
        /// Tabular level set; the default tabular set if omitted.
        #[arg(long)]
        levels: Option<String>,
        /// Use this checkpoint's actor and critic instead of a uniform
        /// policy with the level-averaged value as predictor.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exact checks of baseline invariance and the optimal baseline.
    Lemmas {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 20)]
        baselines: usize,
        #[arg(long, default_value_t = 10)]
        sets: usize,
    },
    /// Early-training advantage variance against the number of levels.
    VarianceCurve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "1,5,20,50,100", value_delimiter = ',')]
        counts: Vec<usize>,
        #[arg(long, default_value = "0,1,2,3", value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 30)]
        updates: usize,
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 128)]
        steps_per_worker: usize,
        #[arg(long, default_value_t = dvelab::envs::gapworld::DEFAULT_LENGTH)]
        gapworld_length: usize,
        #[arg(long, default_value_t = 32)]
        encoder_hidden: usize,
        #[arg(long, default_value_t = 64)]
        lstm_hidden: usize,
    },
    /// Per-step confusion and per-episode cluster contributions of a
    /// dynamic-head checkpoint.
    Confusion {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "gapworld:50")]
        levels: String,
        #[arg(long, default_value_t = dvelab::envs::gapworld::DEFAULT_LENGTH)]
        gapworld_length: usize,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        episodes: u64,
        #[arg(long, default_value_t = dvelab::envs::DEFAULT_HORIZON)]
        horizon: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Train(args) => commands::train::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
        Command::Analyze(cmd) => commands::analyze::run(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                CliError::Config(_) => "config error",
                CliError::Runtime(_) => "error",
            };
            eprintln!("dvelab: {kind}: {e}");
            ExitCode::from(e.code())
        }
    }
}
