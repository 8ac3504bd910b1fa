use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the metric-learning and scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("matrix is not positive definite (smallest pivot {pivot:e})")]
    NotPositiveDefinite { pivot: f64 },

    #[error("positive-definiteness violated: quadratic form evaluated to {0:e}")]
    PdViolation(f64),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("scoring error for '{word}': {msg}")]
    Scoring { word: String, msg: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("training diverged at epoch {epoch} (loss trace: {trace:?})")]
    Diverged { epoch: usize, trace: Vec<f64> },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad inputs rather than runtime failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Shape { .. }
                | Error::Validation(_)
                | Error::Input(_)
                | Error::Data(_)
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Corrupt { .. }
                | Error::Consistency(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
