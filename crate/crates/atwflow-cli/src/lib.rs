//! Scenario parsing and the subcommands of the `atwflow` binary.
//!
//! Exit status: 0 on success, 1 when a property check fails or the
//! computation itself errors, 2 for usage and scenario errors.

pub mod commands;
pub mod output;
pub mod scenario;

use atwflow::AtwError;

pub use scenario::{parse_scenario, parse_scenario_str, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error(transparent)]
    Atw(#[from] AtwError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Scenario(_) => 2,
            _ => 1,
        }
    }
}

/// Whether every check a command ran passed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub passed: bool,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}
