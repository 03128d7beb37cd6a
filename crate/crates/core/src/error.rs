use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tie {tie}: {reason}")]
    InvalidTie { tie: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite log density at {location}")]
    NonFinite { location: String },

    #[error("degenerate chains: {0}")]
    Degenerate(String),

    #[error("sampler failed: {0}")]
    Sampler(String),

    #[error("cannot open {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from a missing or unreadable input file.
    pub fn is_missing_input(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
