use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("entities without a name entry: {}", .0.join(", "))]
    MissingNames(Vec<String>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("target error: {0}")]
    Target(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: non-finite loss at step {step}")]
    Diverged { step: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("degenerate split: {train} training and {valid} validation triples survive pruning")]
    DegenerateSplit { train: usize, valid: usize },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 1 usage/config, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Validation(_) => 1,
            Error::Parse { .. }
            | Error::Vocabulary(_)
            | Error::MissingNames(_)
            | Error::Input(_)
            | Error::Target(_)
            | Error::Consistency(_)
            | Error::DegenerateSplit { .. }
            | Error::Metric(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
            Error::Checkpoint(_) | Error::Diverged { .. } => 3,
        }
    }
}
