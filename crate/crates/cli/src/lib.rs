//! Command-line front end for the `basestation` crate: scenario files,
//! one subcommand per analysis, CSV output.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod output;
pub mod scenario;
pub mod verify;

use thiserror::Error;

pub use scenario::{parse_scenario, parse_scenario_str, NamedScenario};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },

    #[error(transparent)]
    Core(#[from] basestation::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{0}")]
    VerificationFailed(String),
}

impl CliError {
    /// 1 verification failure, 2 usage or input error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::VerificationFailed(_) => 1,
            CliError::Core(e) if e.is_numeric() => 3,
            _ => 2,
        }
    }
}
