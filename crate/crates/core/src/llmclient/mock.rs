//! Deterministic offline backend.
//!
//! Embeddings are unit vectors built from a seeded hash of the whole text
//! plus fixed "concept directions" for every configured concept token found
//! in the text. Planting a concept token in a group of documents therefore
//! plants a cluster in embedding space. Chat responses are stitched from the
//! supplied context and the record's properties.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendError, ChatRequest};
use crate::digest::ContentDigest;
use crate::text::normalized_tokens;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    pub token: String,
    /// Explicit direction (normalized on use). When absent a seeded random
    /// unit direction is derived from the token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockConfig {
    pub seed: u64,
    pub dim: usize,
    pub chat_model: String,
    pub embedding_model: String,
    /// Weight of the per-text hash component.
    pub noise_weight: f64,
    /// Weight of each concept direction present in the text.
    pub concept_weight: f64,
    pub concepts: Vec<Concept>,
    pub max_context_chars: Option<usize>,
    /// Number of leading chat calls that fail with HTTP 503.
    pub chat_failures: u32,
    /// Every embedding call fails with HTTP 503.
    pub embed_unavailable: bool,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 64,
            chat_model: "mock-chat".into(),
            embedding_model: "mock-embed".into(),
            noise_weight: 0.6,
            concept_weight: 1.0,
            concepts: Vec::new(),
            max_context_chars: None,
            chat_failures: 0,
            embed_unavailable: false,
        }
    }
}

#[derive(Debug)]
pub struct MockBackend {
    config: MockConfig,
    directions: BTreeMap<String, Vec<f64>>,
    chat_calls: AtomicUsize,
    embed_calls: AtomicUsize,
    failures_left: AtomicU32,
}

/// Seeded Gaussian vector normalized to unit length.
pub fn hashed_unit_vector(seed: u64, domain: &str, text: &str, dim: usize) -> Vec<f64> {
    let mut d = ContentDigest::new("mock-vector");
    d.field(&seed.to_le_bytes()).str(domain).str(text);
    let hex = d.finish();
    let mut key = [0u8; 32];
    for (i, b) in key.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hex digest");
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(v)
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

impl MockBackend {
    pub fn new(config: MockConfig) -> Result<Self, BackendError> {
        if config.dim < 2 {
            return Err(BackendError::Decode("mock dimension must be at least 2".into()));
        }
        let mut directions = BTreeMap::new();
        for c in &config.concepts {
            let token = c.token.to_lowercase();
            let dir = match &c.direction {
                Some(d) if d.len() == config.dim => normalize(d.clone()),
                Some(d) => {
                    return Err(BackendError::Decode(format!(
                        "concept `{}` direction has length {}, expected {}",
                        c.token,
                        d.len(),
                        config.dim
                    )))
                }
                None => hashed_unit_vector(config.seed, "concept", &token, config.dim),
            };
            directions.insert(token, dir);
        }
        Ok(Self {
            failures_left: AtomicU32::new(config.chat_failures),
            config,
            directions,
            chat_calls: AtomicUsize::new(0),
            embed_calls: AtomicUsize::new(0),
        })
    }

    pub fn config(&self) -> &MockConfig {
        &self.config
    }

    pub fn chat_calls(&self) -> usize {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn embed_calls(&self) -> usize {
        self.embed_calls.load(Ordering::SeqCst)
    }

    pub fn concept_direction(&self, token: &str) -> Option<&[f64]> {
        self.directions.get(&token.to_lowercase()).map(Vec::as_slice)
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let dim = self.config.dim;
        let noise = hashed_unit_vector(self.config.seed, "text", text, dim);
        let mut v: Vec<f64> = noise.iter().map(|x| x * self.config.noise_weight).collect();
        if !self.directions.is_empty() {
            let mut present: Vec<&str> = normalized_tokens(text)
                .iter()
                .filter_map(|t| self.directions.get_key_value(t.as_str()).map(|(k, _)| k.as_str()))
                .collect();
            present.sort_unstable();
            present.dedup();
            for token in present {
                let dir = &self.directions[token];
                for (x, d) in v.iter_mut().zip(dir) {
                    *x += self.config.concept_weight * d;
                }
            }
        }
        normalize(v)
    }

    fn stitch_summary(&self, request: &ChatRequest) -> String {
        let prompt = request
            .messages
            .iter()
            .find(|m| m.role == "system")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let context = request
            .messages
            .iter()
            .filter(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let protocol = prompt.contains("[MENTIONED: YES]");

        let mut out = String::new();
        let source_type = request
            .record
            .as_ref()
            .map(|r| r.source_type.as_str())
            .unwrap_or("unknown");
        if protocol {
            let mentioned = request
                .record
                .as_ref()
                .is_some_and(|r| r.name_ids.iter().any(|n| !n.is_empty() && context.contains(n)));
            out.push_str(if mentioned {
                "[MENTIONED: YES]\n"
            } else {
                "[MENTIONED: NO]\n"
            });
        }
        out.push_str("A) X-ray Properties\n\n");
        out.push_str(&format!("The source is classified as type {source_type}."));
        let context_text: String = context.split_whitespace().collect::<Vec<_>>().join(" ");
        if !context_text.is_empty() {
            out.push(' ');
            out.push_str(&context_text);
        }
        if let Some(r) = &request.record {
            let p = &r.properties;
            if p.powlaw_gamma.is_some() {
                out.push_str(" A power-law model was fitted to the spectrum.");
            }
            if p.bb_kt.is_some() {
                out.push_str(" A blackbody model was also considered.");
            }
            if p.hard_hs.is_some() {
                out.push_str(" Hardness ratios were measured.");
            }
            match p.var_index_b {
                Some(v) if v >= 6 => out.push_str(" The light curve shows strong variability."),
                Some(_) => out.push_str(" The flux appears steady within the observation."),
                None => {}
            }
        }
        out.push_str("\n\nB) Use in Scientific Hypotheses\n\n");
        out.push_str(&format!(
            "These properties are used to test models of sources of type {source_type}."
        ));
        out
    }
}

impl Backend for MockBackend {
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
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        let failing = self
            .failures_left
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(BackendError::Http {
                status: 503,
                body: "mock: service unavailable".into(),
            });
        }
        Ok(self.stitch_summary(request))
    }

    fn embed(&self, _model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.embed_calls.fetch_add(1, Ordering::SeqCst);
        if self.config.embed_unavailable {
            return Err(BackendError::Http {
                status: 503,
                body: "mock: embeddings unavailable".into(),
            });
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
