//! `fedsim` — generate synthetic multi-silo cohorts, train models under
//! centralized, federated, and specialized-federated regimes, and compare
//! the resulting runs.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::Config;
pub use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "fedsim",
    version,
    about = "Federated-learning simulator for multi-silo tabular cohorts"
)]
struct Cli {
    /// Worker threads for parallel sections (default: all cores). Results
    /// are identical regardless of the value.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort: one CSV per silo plus dataset.json
    GenData {
        /// Experiment config (TOML); built-in defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory to write the cohort into (created if missing)
        #[arg(long)]
        out_dir: PathBuf,
        /// Override the generator seed from the config
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one regime on a generated cohort and evaluate its test split
    Train {
        /// Experiment config (TOML); built-in defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cohort directory produced by gen-data
        #[arg(long)]
        data_dir: PathBuf,
        /// Directory for the model, trace, eval record, and run.json
        #[arg(long)]
        out_dir: PathBuf,
        /// Training regime
        #[arg(long, value_enum)]
        mode: Mode,
        /// Override the regime's seed (shuffle seed for central, master
        /// seed for fedavg/fadl)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Tabulate finished runs side by side (they must share a cohort)
    Compare {
        /// Two or more run directories produced by train
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Also write the comparison as JSON to this path
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum Mode {
    /// Pool every silo's train rows and fit one model
    Central,
    /// Cycle-wise federated averaging weighted by train counts
    Fedavg,
    /// Federated stage, then per-silo specialization with layer 1 frozen
    Fadl,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Central => "central",
            Mode::Fedavg => "fedavg",
            Mode::Fadl => "fadl",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot configure thread pool: {e}")))?;
    }

    match cli.command {
        Command::GenData { config, out_dir, seed } => {
            let cfg = Config::load(config.as_deref())?;
            commands::gen_data::run(&cfg, &out_dir, seed)
        }
        Command::Train { config, data_dir, out_dir, mode, seed } => {
            let cfg = Config::load(config.as_deref())?;
            commands::train::run(&cfg, &data_dir, &out_dir, mode.as_str(), seed).map(|_| ())
        }
        Command::Compare { runs, out } => commands::compare::run(&runs, out.as_deref()),
    }
}
