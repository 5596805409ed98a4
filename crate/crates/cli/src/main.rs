//! Command-line driver: sequential-design runs, statistical verification
//! suites and bit-exact trajectory replay.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{ExperimentConfig, Overrides};

/// Exit statuses: 0 success or expected outcome, 1 validation error,
/// 2 numerical/singular error, 3 verification contrary to expectation or
/// replay divergence, 4 inconclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    Validation,
    Numerical,
    Contrary,
    Inconclusive,
}

impl ExitStatus {
    fn code(self) -> u8 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Validation => 1,
            ExitStatus::Numerical => 2,
            ExitStatus::Contrary => 3,
            ExitStatus::Inconclusive => 4,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Contrary(String),
    Inconclusive(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m)
            | CliError::Numerical(m)
            | CliError::Contrary(m)
            | CliError::Inconclusive(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    fn status(&self) -> ExitStatus {
        match self {
            CliError::Validation(_) => ExitStatus::Validation,
            CliError::Numerical(_) => ExitStatus::Numerical,
            CliError::Contrary(_) => ExitStatus::Contrary,
            CliError::Inconclusive(_) => ExitStatus::Inconclusive,
        }
    }
}

impl From<seqgp::Error> for CliError {
    fn from(e: seqgp::Error) -> Self {
        match e {
            seqgp::Error::SingularModel { .. } => CliError::Numerical(e.to_string()),
            seqgp::Error::ReplayDivergence { .. } => CliError::Contrary(e.to_string()),
            seqgp::Error::Inconclusive(_) => CliError::Inconclusive(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "seqgp",
    about = "Sequential design on Gaussian random functions, with statistical verification of its conditioning heuristics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sequential-design loop and write the trajectory artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Master seed; overrides the config key `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread cap; results are identical for any value.
        #[arg(long)]
        threads: Option<usize>,
        /// Output directory; overrides the config key `output`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a verification suite and write per-bin and summary artifacts.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run a recorded trajectory and confirm the file is bit-exact.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn set_thread_cap(threads: Option<usize>) {
    if let Some(n) = threads {
        // Build errors only if a global pool already exists; harmless here
        // because we configure before any parallel work.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn dispatch(cli: Cli) -> Result<ExitStatus, CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            threads,
            out,
        } => {
            let cfg = ExperimentConfig::load(
                &config,
                &Overrides {
                    seed,
                    threads,
                    output: out,
                },
            )?;
            set_thread_cap(threads.or(cfg.threads));
            commands::cmd_run(&cfg)
        }
        Command::Verify {
            config,
            seed,
            threads,
            out,
        } => {
            let cfg = ExperimentConfig::load(
                &config,
                &Overrides {
                    seed,
                    threads,
                    output: out,
                },
            )?;
            set_thread_cap(threads.or(cfg.threads));
            commands::cmd_verify(&cfg)
        }
        Command::Replay { manifest, threads } => {
            set_thread_cap(threads);
            commands::cmd_replay(&manifest)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(status) => ExitCode::from(status.code()),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status().code())
        }
    }
}
