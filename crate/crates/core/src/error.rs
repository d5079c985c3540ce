use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent diffusion state: {0}")]
    InconsistentState(String),

    #[error("cannot ingest {}: {msg}", file.display())]
    Ingest { file: PathBuf, msg: String },

    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),

    #[error("invalid fold: {0}")]
    InvalidFold(String),

    #[error("non-finite loss at step {step} (graph {graph}, t = {t}): {detail}")]
    NonFinite {
        step: u64,
        graph: usize,
        t: usize,
        detail: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("artifact error: {0}")]
    Artifact(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Other,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Checkpoint(_) => {
                ErrorClass::Config
            }
            Error::Ingest { .. } | Error::CorruptDataset(_) | Error::InvalidFold(_) => {
                ErrorClass::Data
            }
            Error::NonFinite { .. } | Error::InconsistentState(_) => ErrorClass::Numeric,
            Error::Artifact(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Other,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
