//! Config-driven experiment harness over `nnet_core`.
//!
//! Every command reads one [`config::ExperimentConfig`], writes CSV files
//! into an output directory and returns the rows it wrote.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};

use nnet_core::Error;

pub use commands::*;
pub use config::ExperimentConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// 1 validation, 2 solver, 3 simulation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                Error::PoolingViolation { .. }
                | Error::OverloadViolation { .. }
                | Error::NonpositiveRate(_)
                | Error::NegativeRate { .. }
                | Error::InvalidParameter(_)
                | Error::PreconditionViolation(_)
                | Error::InvalidGrid(_) => 1,
                Error::NonMonotone { .. }
                | Error::SingularEvaluation(_)
                | Error::SingularAdjoint(_)
                | Error::MaxIterations(_)
                | Error::MaxOuterIterations(_)
                | Error::InfeasibleBudget(_)
                | Error::BracketNotFound { .. }
                | Error::EmptyActionSet { .. }
                | Error::NonConvergentSpan(_)
                | Error::BoxTooLarge(_)
                | Error::BoxEmpty => 2,
                Error::InfeasibleRectangle { .. }
                | Error::NonIntegerSum(_)
                | Error::DegenerateHorizon { .. }
                | Error::InsufficientBatches { .. }
                | Error::ZeroTotalRate { .. }
                | Error::InvalidAction { .. } => 3,
                Error::Io(_) | Error::Csv(_) | Error::Parse(_) => 4,
            },
        }
    }
}
