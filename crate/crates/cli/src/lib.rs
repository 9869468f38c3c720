//! `srr` command implementations.
//!
//! Each subcommand is a plain function over parsed arguments so the test
//! suites can drive it without spawning processes. Human-readable tables go
//! to the supplied writer; machine-readable JSON only ever goes to files.

pub mod args;
pub mod bench;
pub mod commands;

use std::path::{Path, PathBuf};

use srr_core::redundancy::RedundancyError;
use srr_core::selection::PlanError;
use srr_core::statmodel::StatError;
use srr_core::weights_io::{ArchError, BindError, WeightsError};
use thiserror::Error;

pub use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or malformed input.
    #[error("{0}")]
    Parse(String),
    /// Well-formed input that violates a constraint.
    #[error("{0}")]
    Validation(String),
    /// Budget cannot be met, or a plan does not fit the model.
    #[error("{0}")]
    Infeasible(String),
    /// An inequality that must hold for every sample did not.
    #[error("{0}")]
    Invariant(String),
    #[error("writing {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Validation(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Invariant(_) | CliError::Output { .. } => 1,
        }
    }

    pub(crate) fn weights(path: &Path, e: WeightsError) -> Self {
        match e {
            // The Io variant already names the path.
            WeightsError::Io { .. } => CliError::Parse(e.to_string()),
            e => CliError::Parse(format!("{}: {e}", path.display())),
        }
    }

    pub(crate) fn arch(path: &Path, e: ArchError) -> Self {
        match e {
            ArchError::Io { .. } => CliError::Parse(e.to_string()),
            ArchError::Parse(_) => CliError::Parse(format!("{}: {e}", path.display())),
            e => CliError::Validation(format!("{}: {e}", path.display())),
        }
    }
}

impl From<BindError> for CliError {
    fn from(e: BindError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<RedundancyError> for CliError {
    fn from(e: RedundancyError) -> Self {
        match e {
            RedundancyError::InfeasibleFilters { .. } | RedundancyError::InfeasibleFlops { .. } => {
                CliError::Infeasible(e.to_string())
            }
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::Parse(_) | PlanError::Io { .. } => CliError::Parse(e.to_string()),
            e => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<StatError> for CliError {
    fn from(e: StatError) -> Self {
        match e {
            StatError::Parse(_) => CliError::Parse(e.to_string()),
            StatError::Invalid(_) => CliError::Validation(e.to_string()),
        }
    }
}

/// Run a parsed command line, writing human output to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Analyze(a) => commands::analyze(a, out),
        Command::Plan(a) => commands::plan(a, out),
        Command::Apply(a) => commands::apply(a, out),
        Command::Simulate(a) => commands::simulate(a, out),
        Command::BenchCover(a) => commands::bench_cover(a, out),
        Command::Flops(a) => commands::flops(a, out),
    }
}

/// Size the global worker pool from `SRR_THREADS`, if set.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("SRR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Validation(format!("SRR_THREADS must be a positive integer, got {v:?}")))?;
    // A second call (tests running several commands) keeps the first pool.
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        log::debug!("worker pool already initialised");
    }
    Ok(())
}
