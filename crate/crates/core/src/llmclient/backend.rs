use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::SourceRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: "user".into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    /// The record being summarized. Never sent over the wire; offline
    /// backends may use it to stitch deterministic responses.
    pub record: Option<SourceRecord>,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("missing credential: environment variable `{0}` is not set")]
    MissingToken(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Http { status, .. } => *status >= 500 || *status == 429,
            BackendError::Transport(_) => true,
            BackendError::Decode(_) | BackendError::MissingToken(_) => false,
        }
    }
}

/// A chat-completion plus embedding service.
pub trait Backend: Send + Sync {
    fn chat_model(&self) -> &str;
    fn embedding_model(&self) -> &str;

    /// Upper bound on prompt + context size, in characters.
    fn max_context_chars(&self) -> Option<usize> {
        None
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError>;

    /// One vector per input text, in input order.
    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub backoff_factor: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            backoff_factor: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_retries: u32) -> Self {
        Self {
            max_retries,
            initial_backoff_ms: 0,
            backoff_factor: 1.0,
        }
    }

    /// Run `op` until it succeeds, fails with a non-retryable error, or the
    /// retry budget is spent. The error carries the number of attempts made.
    pub fn run<T>(
        &self,
        mut op: impl FnMut() -> Result<T, BackendError>,
    ) -> Result<T, (u32, BackendError)> {
        let mut attempts = 0;
        let mut delay = self.initial_backoff_ms as f64;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempts <= self.max_retries => {
                    if delay > 0.0 {
                        thread::sleep(Duration::from_millis(delay as u64));
                    }
                    delay *= self.backoff_factor;
                }
                Err(e) => return Err((attempts, e)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn retries_until_exhausted() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::no_backoff(2).run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Http {
                status: 503,
                body: String::new(),
            })
        });
        let (attempts, _) = r.unwrap_err();
        assert_eq!(attempts, 3);
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let calls = Cell::new(0);
        let r: Result<(), _> = RetryPolicy::no_backoff(5).run(|| {
            calls.set(calls.get() + 1);
            Err(BackendError::Http {
                status: 400,
                body: String::new(),
            })
        });
        assert_eq!(r.unwrap_err().0, 1);
    }

    #[test]
    fn recovers_after_transient_failure() {
        let calls = Cell::new(0);
        let r = RetryPolicy::no_backoff(2).run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 2 {
                Err(BackendError::Transport("reset".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }
}
