//! Command-line harness: loads a JSON run config, runs one experiment and
//! writes its artifacts (JSON, CSV and a `manifest.json`) to an output
//! directory. Exit codes: 0 success, 1 numerical failure, 2 config error.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "relsp", version, about = "Relativistic Schrödinger–Poisson experiments on a Dirichlet box")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Base seed; overrides `seed` from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the stationary state and check duality.
    Stationary(CommonArgs),
    /// Evolve an initial state and record the trajectory.
    Evolve(CommonArgs),
    /// Perturb-and-evolve stability campaign.
    Stability(CommonArgs),
    /// Run the property suites.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated subset of casimir, state, solver, evolution.
        #[arg(long, value_delimiter = ',')]
        suites: Vec<String>,
        /// Swap in a non-monotone distribution (negative control).
        #[arg(long)]
        inject_bad_distribution: bool,
    },
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match commands::dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
