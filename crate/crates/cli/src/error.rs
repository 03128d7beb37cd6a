use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable config, or a missing input file.
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] coopnet::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn missing(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("cannot read {}: {e}", path.display()))
    }

    pub fn output(path: &Path, e: std::io::Error) -> Self {
        CliError::Output {
            path: path.display().to_string(),
            source: e,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_missing_input() => 2,
            CliError::Core(_) | CliError::Output { .. } => 1,
        }
    }
}
