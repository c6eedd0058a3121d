use std::io;

use astrolens::llmclient::{BackendError, LlmError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error("missing dependency: run {stage} first")]
    MissingDependency { stage: &'static str },
    #[error("stale input from {stage}: {reason} (rerun it or pass --force)")]
    Stale { stage: &'static str, reason: String },
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::MissingDependency { .. } | CliError::Stale { .. } => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn user(msg: impl std::fmt::Display) -> Self {
        CliError::User(msg.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::User(format!("I/O error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(format!("JSON error: {e}"))
    }
}

impl From<LlmError> for CliError {
    fn from(e: LlmError) -> Self {
        match e {
            LlmError::Backend { .. } | LlmError::MissingMentionMarker { .. } => CliError::Backend(e.to_string()),
            other => CliError::User(other.to_string()),
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Backend(e.to_string())
    }
}

/// Wrap a library error as a user error with a short prefix.
pub(crate) fn ctx<E: std::fmt::Display>(what: &'static str) -> impl Fn(E) -> CliError {
    move |e| CliError::User(format!("{what}: {e}"))
}
