use std::path::PathBuf;

use stca::StcaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config {path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Data { path: String, line: usize, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(#[from] StcaError),
}

impl CliError {
    /// 1 for usage or configuration problems, 2 for bad input data, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config { .. } => 1,
            Self::Io { .. } | Self::Data { .. } => 2,
            Self::Numerical(_) => 3,
            Self::Core(e) => match e {
                StcaError::NonFinite(_) => 3,
                StcaError::EvenWindow(_) | StcaError::InvalidConfig(_) => 1,
                _ => 2,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
