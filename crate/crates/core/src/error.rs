use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("client {client} has an empty training set")]
    EmptyTrainingSet { client: String },

    #[error("client {client} has an empty test set")]
    EmptyTestSet { client: String },

    #[error("ingestion error{}: {reason}", user.as_ref().map(|u| format!(" for user {u}")).unwrap_or_default())]
    Ingestion { user: Option<String>, reason: String },

    #[error("criterion {criterion}: {reason}")]
    Criterion { criterion: String, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("round {round} aborted: {reason}")]
    RoundAbort { round: usize, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn ingestion(user: Option<&str>, reason: impl Into<String>) -> Self {
        Error::Ingestion {
            user: user.map(str::to_owned),
            reason: reason.into(),
        }
    }

    pub(crate) fn criterion(criterion: &str, reason: impl Into<String>) -> Self {
        Error::Criterion {
            criterion: criterion.to_owned(),
            reason: reason.into(),
        }
    }
}
