use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the kernel-learning toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("index {index} out of range for {len} hyperparameters")]
    Index { index: usize, len: usize },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("initialization error: {0}")]
    Initialization(String),

    #[error("parse error at {path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
