use std::path::PathBuf;

use thiserror::Error;
use tmerge_core::ErrorCategory;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing artifact: {0}")]
    Missing(PathBuf),

    #[error("internal: {0}")]
    Internal(String),

    #[error("run directory {0} already exists")]
    RunExists(PathBuf),

    #[error(transparent)]
    Core(#[from] tmerge_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// Process exit status: 2 config, 3 missing artifact, 4 support
    /// coverage, 5 internal invariant, 1 other I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Internal(_) => 5,
            CliError::RunExists(_) => 1,
            CliError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 3,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::MissingArtifact => 3,
                ErrorCategory::Support => 4,
                ErrorCategory::Internal => 5,
                ErrorCategory::Io => 1,
            },
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
