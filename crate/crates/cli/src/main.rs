//! `tabdiff`: train, generate, impute, evaluate and benchmark from the
//! command line.
//!
//! Settings come from an optional JSON config (`--config`); flags given on
//! the command line override the matching config fields, and anything left
//! unset falls back to the library defaults.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tabdiff::masking::MaskMode;
use tabdiff::ErrorCategory;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] tabdiff::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 1,
                ErrorCategory::Data => 2,
                ErrorCategory::Training => 3,
                ErrorCategory::Mismatch => 4,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "tabdiff", version, about = "Mixed-type tabular diffusion")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MaskArg {
    Full,
    Dynamic,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every stochastic step of the command.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Rows to generate.
    #[arg(long, global = true)]
    rows: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    mask_mode: Option<MaskArg>,
    /// Diffusion steps.
    #[arg(long, global = true)]
    timesteps: Option<usize>,
    /// Input CSV.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Schema JSON.
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a generator and write its checkpoint and training log.
    Train,
    /// Sample synthetic rows from a checkpoint.
    Generate,
    /// Fill the missing cells of a CSV.
    Impute,
    /// Compare a synthetic table with real data.
    Evaluate {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        synthetic: Option<PathBuf>,
        /// Held-out real rows for the probe comparison.
        #[arg(long)]
        test: Option<PathBuf>,
    },
    /// Run the missing-data imputation benchmark.
    Benchmark,
    /// Write one of the bundled example datasets with its schema.
    Dataset {
        #[arg(value_enum)]
        name: DatasetName,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetName {
    Mixed,
    Regression,
}

fn apply_flags(mut config: RunConfig, c: &Common) -> RunConfig {
    if let Some(seed) = c.seed {
        config.train.seed = seed;
        config.generate.seed = seed;
        config.impute.seed = seed;
        config.evaluate.seed = seed;
        config.benchmark.seed = seed;
    }
    if let Some(rows) = c.rows {
        config.generate.rows = rows;
    }
    if let Some(t) = c.timesteps {
        config.train.timesteps = t;
    }
    if let Some(m) = c.mask_mode {
        config.train.mask_mode = match m {
            MaskArg::Full => MaskMode::Full,
            MaskArg::Dynamic => MaskMode::Dynamic,
        };
    }
    for (slot, flag) in [
        (&mut config.out, &c.out),
        (&mut config.checkpoint, &c.checkpoint),
        (&mut config.data, &c.data),
        (&mut config.schema, &c.schema),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    config
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut config = apply_flags(base, &cli.common);
    config.validate()?;
    match cli.command {
        Command::Train => commands::train(&config),
        Command::Generate => commands::generate(&config),
        Command::Impute => commands::impute(&config),
        Command::Evaluate { real, synthetic, test } => {
            let e = &mut config.evaluate;
            e.real = real.or(e.real.take());
            e.synthetic = synthetic.or(e.synthetic.take());
            e.test = test.or(e.test.take());
            commands::evaluate(&config)
        }
        Command::Benchmark => commands::benchmark(&config),
        Command::Dataset { name } => commands::dataset(&config, name, cli.common.rows),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(v) = std::env::var("TABDIFF_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => tabdiff::par::init_threads(n),
            _ => {
                eprintln!("error: TABDIFF_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(1);
            }
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
