//! Errors and process exit codes.

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("missing artifact {}: run `{command}` first", path.display())]
    MissingArtifact { path: PathBuf, command: &'static str },
    #[error("{0}")]
    Assertion(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] robust_doa_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format { path: path.to_path_buf(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) | CliError::MissingArtifact { .. } => 2,
            CliError::Core(robust_doa_core::Error::InvalidParameter(_))
            | CliError::Core(robust_doa_core::Error::Parse { .. })
            | CliError::Core(robust_doa_core::Error::InvalidRegion(_))
            | CliError::Core(robust_doa_core::Error::OriginOutsideGrid) => 2,
            CliError::Assertion(_) | CliError::Core(_) => 3,
            CliError::Io { .. } | CliError::Format { .. } => 4,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
