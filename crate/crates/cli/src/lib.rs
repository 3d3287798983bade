//! IO, configuration, and the training/evaluation harness around
//! `fldmamba-core`. The binary in `main.rs` is a thin dispatcher over the
//! functions here so integration tests can drive everything in-process.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod harness;
pub mod train;

use std::fmt;

/// Every failure maps onto the documented process exit codes:
/// 1 config, 2 data, 3 numeric divergence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Data(String),
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Divergence(m) => write!(f, "numeric divergence: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

pub fn config_error(msg: impl fmt::Display) -> CliError {
    CliError::Config(msg.to_string())
}

pub fn data_error(msg: impl fmt::Display) -> CliError {
    CliError::Data(msg.to_string())
}
