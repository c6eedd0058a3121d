//! Chat-completions style HTTP backend.
//!
//! Wire format (JSON over `POST`):
//!
//! * `{base_url}/chat/completions`
//!   request  `{"model": str, "messages": [{"role": str, "content": str}, ...]}`
//!   response `{"choices": [{"message": {"content": str}}, ...]}` (first choice used)
//! * `{base_url}/embeddings`
//!   request  `{"model": str, "input": [str, ...]}`
//!   response `{"data": [{"index": int, "embedding": [float, ...]}, ...]}`
//!
//! The bearer token is read from the environment variable named in
//! [`HttpConfig::token_env`] at construction time.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError, ChatMessage, ChatRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    pub chat_model: String,
    pub embedding_model: String,
    pub token_env: String,
    /// Requests per minute across both endpoints. `0` disables limiting.
    pub requests_per_minute: u32,
    pub timeout_secs: u64,
    pub max_context_chars: Option<usize>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            chat_model: "gpt-4o-mini".into(),
            embedding_model: "text-embedding-ada-002".into(),
            token_env: "OPENAI_API_KEY".into(),
            requests_per_minute: 60,
            timeout_secs: 120,
            max_context_chars: None,
        }
    }
}

/// Token bucket holding at most one request's worth of burst.
#[derive(Debug)]
pub struct TokenBucket {
    interval: Duration,
    state: Mutex<Option<Instant>>,
}

impl TokenBucket {
    pub fn per_minute(rpm: u32) -> Option<Self> {
        (rpm > 0).then(|| Self {
            interval: Duration::from_secs_f64(60.0 / rpm as f64),
            state: Mutex::new(None),
        })
    }

    /// Block until the next request slot and claim it.
    pub fn acquire(&self) {
        let wait = {
            let mut next = self.state.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = match *next {
                Some(t) if t > now => t,
                _ => now,
            };
            *next = Some(slot + self.interval);
            slot.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct ChatBody<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Serialize)]
struct EmbedBody<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedItem>,
}

#[derive(Deserialize)]
struct EmbedItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

pub struct HttpBackend {
    config: HttpConfig,
    token: String,
    agent: ureq::Agent,
    limiter: Option<TokenBucket>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        let token = std::env::var(&config.token_env)
            .map_err(|_| BackendError::MissingToken(config.token_env.clone()))?;
        Ok(Self::with_token(config, token))
    }

    pub fn with_token(config: HttpConfig, token: String) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Self {
            limiter: TokenBucket::per_minute(config.requests_per_minute),
            config,
            token,
            agent,
        }
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &B,
    ) -> Result<R, BackendError> {
        if let Some(l) = &self.limiter {
            l.acquire();
        }
        let url = format!("{}/{path}", self.config.base_url.trim_end_matches('/'));
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.token))
            .send_json(body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendError::Http { status, body });
        }
        resp.body_mut()
            .read_json::<R>()
            .map_err(|e| BackendError::Decode(e.to_string()))
    }
}

impl Backend for HttpBackend {
    fn chat_model(&self) -> &str {
        &self.config.chat_model
    }

    fn embedding_model(&self) -> &str {
        &self.config.embedding_model
    }

    fn max_context_chars(&self) -> Option<usize> {
        self.config.max_context_chars
    }

    fn chat(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let resp: ChatResponse = self.post(
            "chat/completions",
            &ChatBody {
                model: &request.model_id,
                messages: &request.messages,
            },
        )?;
        resp.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| BackendError::Decode("response has no choices".into()))
    }

    fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let resp: EmbedResponse = self.post(
            "embeddings",
            &EmbedBody {
                model: model_id,
                input: texts,
            },
        )?;
        if resp.data.len() != texts.len() {
            return Err(BackendError::Decode(format!(
                "{} embeddings returned for {} inputs",
                resp.data.len(),
                texts.len()
            )));
        }
        let mut items: Vec<(usize, Vec<f64>)> = resp
            .data
            .into_iter()
            .enumerate()
            .map(|(pos, it)| (it.index.unwrap_or(pos), it.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        if items.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return Err(BackendError::Decode("embedding indices are not a permutation".into()));
        }
        Ok(items.into_iter().map(|(_, v)| v).collect())
    }
}
