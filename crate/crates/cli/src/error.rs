use std::io;
use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or inputs that disagree with it; exit code 2.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error("missing input {0}")]
    Missing(String),

    #[error("plotting failed: {0}")]
    Plot(String),

    #[error(transparent)]
    Core(#[from] chanpred::Error),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Core(chanpred::Error::Config(_)) => 2,
            _ => 1,
        }
    }
}
