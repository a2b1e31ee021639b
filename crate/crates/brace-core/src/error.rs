//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum BraceError {
    /// Caller-supplied data or configuration violated a precondition.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A numerical operation failed (singular factorization, non-finite
    /// result). `context` carries a serialized snapshot of the offending
    /// state when one is available.
    #[error("numerical error: {message}")]
    Numerical {
        message: String,
        context: Option<String>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl BraceError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        BraceError::InvalidInput(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        BraceError::Numerical {
            message: msg.into(),
            context: None,
        }
    }

    pub fn numerical_with_state(msg: impl Into<String>, state: impl Into<String>) -> Self {
        BraceError::Numerical {
            message: msg.into(),
            context: Some(state.into()),
        }
    }
}

pub type Result<T> = std::result::Result<T, BraceError>;
