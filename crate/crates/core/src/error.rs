use std::io;

use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Variants map onto the CLI exit codes: input-like errors exit with 2,
/// state errors with 3 and numerical failures with 4.
#[derive(Debug, Error)]
pub enum ClotError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("state error: {0}")]
    State(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ClotError {
    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClotError::State(_) => 3,
            ClotError::Numerical(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClotError>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ClotError::Dimension(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(ClotError::Parameter(msg.into()))
}
