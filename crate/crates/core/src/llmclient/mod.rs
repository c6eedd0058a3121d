//! Prompt rendering, summarization and embedding through a pluggable backend.

mod backend;
mod cache;
mod http;
mod mention;
mod mock;
mod prompt;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backend::{Backend, BackendError, ChatMessage, ChatRequest, RetryPolicy};
pub use cache::ContentCache;
pub use http::{HttpBackend, HttpConfig, TokenBucket};
pub use mention::{parse_mentioned, MentionStatus};
pub use mock::{hashed_unit_vector, Concept, MockBackend, MockConfig};
pub use prompt::{python_str_repr, render_name_ids, render_prompt, PromptTemplate, TemplateId};

use crate::corpus::SourceRecord;
use crate::digest::ContentDigest;

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("name_ids must not be empty")]
    EmptyNameIds,
    #[error("template contains unknown placeholder {0}")]
    UnknownPlaceholder(String),
    #[error("backend failed after {attempts} attempt(s): {source}")]
    Backend {
        attempts: u32,
        #[source]
        source: BackendError,
    },
    #[error("context for `{source_id}` is {measured} characters, backend limit is {limit}")]
    ContextTooLarge {
        source_id: String,
        measured: usize,
        limit: usize,
    },
    #[error("response for `{source_id}` lacks the [MENTIONED: YES|NO] marker")]
    MissingMentionMarker { source_id: String },
    #[error("no texts to embed")]
    EmptyInput,
    #[error("text #{0} is empty")]
    EmptyText(usize),
    #[error("embedding dimension mismatch: expected {expected}, got {got} for text #{index}")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        index: usize,
    },
    #[error("invalid embedding matrix: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("cache I/O: {0}")]
    Cache(#[from] io::Error),
}

/// One generated summary and its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDoc {
    pub source_id: String,
    pub text: String,
    pub mentioned: MentionStatus,
    pub prompt_id: TemplateId,
    pub model_id: String,
    /// Digest of (template id, rendered prompt, context, model id).
    pub content_digest: String,
}

pub fn summary_digest(template: TemplateId, rendered: &str, context: &str, model_id: &str) -> String {
    let mut d = ContentDigest::new("summary/v1");
    d.str(template.as_str()).str(rendered).str(context).str(model_id);
    d.finish()
}

fn embedding_digest(model_id: &str, text: &str) -> String {
    let mut d = ContentDigest::new("embedding/v1");
    d.str(model_id).str(text);
    d.finish()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("{rows} rows but {ids} row ids")]
    RowCount { rows: usize, ids: usize },
    #[error("dimension {0} is below 2")]
    TooNarrow(usize),
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("duplicate row id `{0}`")]
    DuplicateId(String),
    #[error("row {row} has length {got}, expected {expected}")]
    Ragged { row: usize, got: usize, expected: usize },
}

/// `n x d` embeddings with one id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub row_ids: Vec<String>,
    pub data: Array2<f64>,
    pub model_id: String,
}

impl EmbeddingMatrix {
    pub fn new(row_ids: Vec<String>, data: Array2<f64>, model_id: impl Into<String>) -> Result<Self, EmbeddingError> {
        let m = Self {
            row_ids,
            data,
            model_id: model_id.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows(
        row_ids: Vec<String>,
        rows: Vec<Vec<f64>>,
        model_id: impl Into<String>,
    ) -> Result<Self, EmbeddingError> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((row, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(EmbeddingError::Ragged {
                row,
                got: r.len(),
                expected: dim,
            });
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let data = Array2::from_shape_vec((n, dim), flat).expect("shape checked");
        Self::new(row_ids, data, model_id)
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn validate(&self) -> Result<(), EmbeddingError> {
        if self.data.nrows() != self.row_ids.len() {
            return Err(EmbeddingError::RowCount {
                rows: self.data.nrows(),
                ids: self.row_ids.len(),
            });
        }
        if self.data.ncols() < 2 {
            return Err(EmbeddingError::TooNarrow(self.data.ncols()));
        }
        if let Some(((row, col), _)) = self.data.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite { row, col });
        }
        let mut seen = BTreeSet::new();
        for id in &self.row_ids {
            if !seen.insert(id.as_str()) {
                return Err(EmbeddingError::DuplicateId(id.clone()));
            }
        }
        Ok(())
    }

    pub fn row_index(&self) -> BTreeMap<&str, usize> {
        self.row_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect()
    }

    /// Rows for `ids`, in that order.
    pub fn select(&self, ids: &[String]) -> Option<Self> {
        let index = self.row_index();
        let picks: Option<Vec<usize>> = ids.iter().map(|id| index.get(id.as_str()).copied()).collect();
        let picks = picks?;
        Some(Self {
            row_ids: ids.to_vec(),
            data: self.data.select(ndarray::Axis(0), &picks),
            model_id: self.model_id.clone(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct EmbeddingMatrixFile {
    model_id: String,
    rows: usize,
    dim: usize,
    row_ids: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl Serialize for EmbeddingMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        EmbeddingMatrixFile {
            model_id: self.model_id.clone(),
            rows: self.rows(),
            dim: self.dim(),
            row_ids: self.row_ids.clone(),
            data: self.data.outer_iter().map(|r| r.to_vec()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EmbeddingMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let f = EmbeddingMatrixFile::deserialize(d)?;
        if f.rows != f.data.len() {
            return Err(D::Error::custom(format!(
                "declared {} rows, found {}",
                f.rows,
                f.data.len()
            )));
        }
        let m = EmbeddingMatrix::from_rows(f.row_ids, f.data, f.model_id).map_err(D::Error::custom)?;
        if m.rows() > 0 && m.dim() != f.dim {
            return Err(D::Error::custom(format!(
                "declared dimension {}, found {}",
                f.dim,
                m.dim()
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientStats {
    pub chat_requests: usize,
    pub embed_requests: usize,
    pub cache_hits: usize,
}

/// Backend access with retries, bounded parallelism and an optional
/// content-addressed response cache.
pub struct LlmClient {
    backend: Arc<dyn Backend>,
    cache: Option<ContentCache>,
    retry: RetryPolicy,
    parallelism: usize,
    embed_batch_size: usize,
    chat_requests: AtomicUsize,
    embed_requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            parallelism: 1,
            embed_batch_size: 64,
            chat_requests: AtomicUsize::new(0),
            embed_requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ContentCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_parallelism(mut self, n: usize) -> Self {
        self.parallelism = n.max(1);
        self
    }

    pub fn with_embed_batch_size(mut self, n: usize) -> Self {
        self.embed_batch_size = n.max(1);
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }

    pub fn stats(&self) -> ClientStats {
        ClientStats {
            chat_requests: self.chat_requests.load(Ordering::SeqCst),
            embed_requests: self.embed_requests.load(Ordering::SeqCst),
            cache_hits: self.cache_hits.load(Ordering::SeqCst),
        }
    }

    /// Summarize one source from its context document.
    ///
    /// The rendered prompt is sent as the system message and the context as
    /// the user message.
    pub fn summarize(
        &self,
        record: &SourceRecord,
        context: &str,
        template: &PromptTemplate,
    ) -> Result<SummaryDoc, LlmError> {
        let rendered = render_prompt(template, &record.name_ids, &record.source_type)?;
        let model_id = self.backend.chat_model().to_string();
        let digest = summary_digest(template.template_id, &rendered, context, &model_id);

        if let Some(cache) = &self.cache {
            if let Some(mut doc) = cache.get::<SummaryDoc>(&digest)? {
                self.cache_hits.fetch_add(1, Ordering::SeqCst);
                doc.source_id = record.source_id.clone();
                return Ok(doc);
            }
        }

        let measured = rendered.chars().count() + context.chars().count();
        if let Some(limit) = self.backend.max_context_chars() {
            if measured > limit {
                return Err(LlmError::ContextTooLarge {
                    source_id: record.source_id.clone(),
                    measured,
                    limit,
                });
            }
        }

        let request = ChatRequest {
            model_id: model_id.clone(),
            messages: vec![ChatMessage::system(rendered), ChatMessage::user(context)],
            record: Some(record.clone()),
        };
        let response = self
            .retry
            .run(|| {
                self.chat_requests.fetch_add(1, Ordering::SeqCst);
                self.backend.chat(&request)
            })
            .map_err(|(attempts, source)| LlmError::Backend { attempts, source })?;

        let (mentioned, text) = if template.has_mention_protocol() {
            match parse_mentioned(&response) {
                (MentionStatus::Unknown, _) => {
                    return Err(LlmError::MissingMentionMarker {
                        source_id: record.source_id.clone(),
                    })
                }
                parsed => parsed,
            }
        } else {
            (MentionStatus::Unknown, response.trim().to_string())
        };
        let doc = SummaryDoc {
            source_id: record.source_id.clone(),
            text,
            mentioned,
            prompt_id: template.template_id,
            model_id,
            content_digest: digest.clone(),
        };
        if let Some(cache) = &self.cache {
            cache.put(&digest, &doc)?;
        }
        Ok(doc)
    }

    /// Summarize many sources, up to `parallelism` backend calls at a time.
    /// Results are in input order.
    pub fn summarize_many(
        &self,
        items: &[(SourceRecord, String)],
        template: &PromptTemplate,
    ) -> Vec<Result<SummaryDoc, LlmError>> {
        if self.parallelism <= 1 {
            return items
                .iter()
                .map(|(r, ctx)| self.summarize(r, ctx, template))
                .collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.parallelism)
            .build()
            .expect("thread pool");
        pool.install(|| {
            items
                .par_iter()
                .map(|(r, ctx)| self.summarize(r, ctx, template))
                .collect()
        })
    }

    /// Embed `texts` in order. Each distinct text is cached by content.
    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmptyInput);
        }
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(LlmError::EmptyText(i));
        }
        let model_id = self.backend.embedding_model().to_string();
        let digests: Vec<String> = texts.iter().map(|t| embedding_digest(&model_id, t)).collect();

        let mut found: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        let mut misses: Vec<usize> = Vec::new();
        let mut queued = BTreeSet::new();
        for (i, d) in digests.iter().enumerate() {
            if found.contains_key(d.as_str()) || queued.contains(d.as_str()) {
                continue;
            }
            let cached = match &self.cache {
                Some(c) => c.get::<Vec<f64>>(d)?,
                None => None,
            };
            match cached {
                Some(v) => {
                    self.cache_hits.fetch_add(1, Ordering::SeqCst);
                    found.insert(d, v);
                }
                None => {
                    queued.insert(d.as_str());
                    misses.push(i);
                }
            }
        }

        let batches: Vec<&[usize]> = misses.chunks(self.embed_batch_size).collect();
        let fetch = |batch: &[usize]| -> Result<Vec<Vec<f64>>, LlmError> {
            let inputs: Vec<String> = batch.iter().map(|&i| texts[i].clone()).collect();
            let vectors = self
                .retry
                .run(|| {
                    self.embed_requests.fetch_add(1, Ordering::SeqCst);
                    self.backend.embed(&model_id, &inputs)
                })
                .map_err(|(attempts, source)| LlmError::Backend { attempts, source })?;
            if vectors.len() != inputs.len() {
                return Err(LlmError::Backend {
                    attempts: 1,
                    source: BackendError::Decode(format!(
                        "{} vectors for {} texts",
                        vectors.len(),
                        inputs.len()
                    )),
                });
            }
            Ok(vectors)
        };
        let fetched: Vec<Result<Vec<Vec<f64>>, LlmError>> = if self.parallelism <= 1 || batches.len() <= 1 {
            batches.iter().map(|b| fetch(b)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.parallelism)
                .build()
                .expect("thread pool");
            pool.install(|| batches.par_iter().map(|b| fetch(b)).collect())
        };
        for (batch, vectors) in batches.iter().zip(fetched) {
            for (&i, v) in batch.iter().zip(vectors?) {
                if let Some(c) = &self.cache {
                    c.put(&digests[i], &v)?;
                }
                found.insert(&digests[i], v);
            }
        }

        let out: Vec<Vec<f64>> = digests.iter().map(|d| found[d.as_str()].clone()).collect();
        let expected = out[0].len();
        if let Some((index, v)) = out.iter().enumerate().find(|(_, v)| v.len() != expected) {
            return Err(LlmError::DimensionMismatch {
                expected,
                got: v.len(),
                index,
            });
        }
        Ok(out)
    }

    pub fn embed(&self, row_ids: Vec<String>, texts: &[String]) -> Result<EmbeddingMatrix, LlmError> {
        let rows = self.embed_texts(texts)?;
        let model_id = self.backend.embedding_model().to_string();
        Ok(EmbeddingMatrix::from_rows(row_ids, rows, model_id)?)
    }
}
