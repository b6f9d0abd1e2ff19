use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the core library.
///
/// Variants are grouped so that a front end can map them onto coarse exit
/// categories with [`Error::category`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("proposal does not cover naturalistic support at β = {beta}")]
    SupportViolation { beta: f64 },

    #[error("degenerate sample set: {0}")]
    DegenerateSamples(String),

    #[error("terminal state cannot be stepped")]
    TerminalState,

    #[error("expected {expected} β values, got {actual}")]
    BetaCount { expected: usize, actual: usize },

    #[error("action index {index} outside action set of size {len}")]
    ActionOutOfRange { index: usize, len: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("malformed literal `{literal}`: {msg}")]
    Literal { literal: String, msg: String },

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("incompatible policy: {0}")]
    Incompatible(String),

    #[error("stage `{stage}` failed at iteration {iteration}: {source}")]
    Stage {
        stage: &'static str,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure class of an [`Error`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    MissingArtifact,
    Support,
    Internal,
    Io,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidDistribution(_)
            | Error::InvalidConfig(_)
            | Error::Literal { .. }
            | Error::Parse { .. }
            | Error::DegenerateSamples(_)
            | Error::Empty(_)
            | Error::Incompatible(_)
            | Error::ActionOutOfRange { .. }
            | Error::BetaCount { .. } => ErrorCategory::Config,
            Error::MissingArtifact(_) => ErrorCategory::MissingArtifact,
            Error::SupportViolation { .. } => ErrorCategory::Support,
            Error::TerminalState => ErrorCategory::Internal,
            Error::Stage { source, .. } => source.category(),
            Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => {
                ErrorCategory::MissingArtifact
            }
            Error::Io(_) => ErrorCategory::Io,
            Error::Json(_) => ErrorCategory::Config,
        }
    }

    pub(crate) fn at_stage(self, stage: &'static str, iteration: usize) -> Error {
        Error::Stage {
            stage,
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
