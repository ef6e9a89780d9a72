use std::path::PathBuf;

use thiserror::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Output could not be written.
pub const EXIT_IO: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
/// Input data is missing, malformed or unusable.
pub const EXIT_DATA: i32 = 3;
/// Calibration finished but could not certify the target risk.
pub const EXIT_INFEASIBLE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },

    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } | CliError::Line { .. } => EXIT_DATA,
            CliError::Write { .. } => EXIT_IO,
        }
    }

    pub(crate) fn data(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        CliError::Data {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn line(path: impl Into<PathBuf>, line: usize, message: impl ToString) -> Self {
        CliError::Line {
            path: path.into(),
            line,
            message: message.to_string(),
        }
    }
}
