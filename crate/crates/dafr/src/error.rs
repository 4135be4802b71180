//! User-facing errors and their exit codes.
//!
//! The contract is stable for scripting: 0 success, 2 usage/config error,
//! 3 data error (datasets, readable inputs), 4 artifact/format error
//! (checkpoints, output files).

use dafr_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unusable plan file, invalid parameter combinations.
    #[error("{0}")]
    Config(String),
    /// Dataset or input-image problems.
    #[error("{0}")]
    Data(String),
    /// Checkpoint or output-artifact problems (format, mismatch, write).
    #[error("{0}")]
    Artifact(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Artifact(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::EmptyDataset => CliError::Data(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
