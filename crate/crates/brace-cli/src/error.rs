//! CLI error taxonomy mapped onto process exit codes:
//! 0 success, 1 I/O or data, 2 usage, 3 numerical.

use std::path::PathBuf;

use brace_core::BraceError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Io(String),

    #[error("{message}")]
    Numerical {
        message: String,
        state_dump: Option<PathBuf>,
    },
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 1,
            CliError::Numerical { .. } => 3,
        }
    }
}

impl From<BraceError> for CliError {
    fn from(err: BraceError) -> Self {
        match err {
            BraceError::Numerical { message, .. } => CliError::Numerical {
                message,
                state_dump: None,
            },
            other => CliError::Io(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Maps config/flag validation failures (which core reports as invalid
/// input) to usage errors instead of I/O errors.
pub fn usage_from(err: BraceError) -> CliError {
    CliError::Usage(err.to_string())
}
