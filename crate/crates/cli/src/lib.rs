//! Command-line front end: loads a configuration, runs the requested
//! computation and writes JSON, CSV and a plain-text summary.

pub mod commands;
pub mod config;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

/// Environment variable holding the number of worker threads.
pub const THREADS_ENV: &str = "PLATFORM_TRIAL_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] platform_trial::Error),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    /// Process exit status: 1 for configuration and I/O problems, 2 when a
    /// computation fails.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "platform-trial", version, about = "Design and evaluate platform trials with arms added at pre-planned stages")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Calibrate boundaries and find sample sizes.
    Design(CommonArgs),
    /// Error rates, power and sample-size distributions of a design.
    Report(CommonArgs),
    /// Monte Carlo simulation of the design as planned and with the late arm
    /// joining at other times.
    Simulate(CommonArgs),
    /// Separate trials, simultaneous and naive designs next to the platform
    /// design.
    Compare(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Use this `design.json` instead of designing from the configuration.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<u64>,
    /// Gauss-Hermite nodes per dimension.
    #[arg(long)]
    pub nodes: Option<usize>,
}

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    match cli.command {
        Command::Design(a) => commands::design(&a),
        Command::Report(a) => commands::report(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Compare(a) => commands::compare(&a),
    }
}
