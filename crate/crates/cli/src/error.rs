use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] sgdebias::Error),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Record { path: PathBuf, line: usize, message: String },
}

impl CliError {
    /// 0 success, 1 usage, 2 data validation, 3 internal invariant failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(sgdebias::Error::Usage(_)) => 1,
            CliError::Core(sgdebias::Error::Internal(_)) => 3,
            CliError::Core(_) | CliError::Io { .. } | CliError::Record { .. } => 2,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn record(path: &Path, line: usize, message: impl Into<String>) -> Self {
        CliError::Record { path: path.to_path_buf(), line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
