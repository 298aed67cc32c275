use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("fixed point did not converge after {iters} iterations (last change {last_change:e})")]
    NoConvergence { iters: usize, last_change: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate distribution: {0}")]
    Degenerate(String),

    #[error("empty document")]
    EmptyDocument,

    #[error("state space too large: {0} assignments")]
    StateSpaceTooLarge(f64),

    #[error("{0} is not specified by the model derivation")]
    Unspecified(&'static str),

    #[error("minibatch {index}: {source}")]
    Minibatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
