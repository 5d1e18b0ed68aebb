use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the monitoring toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("injection error: {0}")]
    Injection(String),

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("routing error: {0}")]
    Routing(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("bundle version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("divergence grid too coarse: probability mass {mass:.4} deviates from 1 by more than 5%")]
    CoarseGrid { mass: f64 },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
