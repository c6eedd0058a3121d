//! Pipeline configuration, persisted as `pipeline.json` at the workspace root.

use std::path::PathBuf;

use astrolens::analysis::{ClusterSpec, ContextConfig, Selector};
use astrolens::corpus::{BinStrategy, Property, SourceFormat};
use astrolens::llmclient::{HttpConfig, MockConfig, RetryPolicy, TemplateId};
use astrolens::purity::Space;
use astrolens::sae::SaeTrainConfig;
use astrolens::synth::FixtureSpec;
use astrolens::tsne::TsneConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock(MockConfig),
    Http(HttpConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Http(HttpConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Paths are relative to the workspace root unless absolute.
    pub sources: PathBuf,
    pub format: SourceFormat,
    /// Optional properties CSV merged over the source records.
    pub properties: Option<PathBuf>,
    /// Directory with one `<source_id>.txt` context document per source.
    pub contexts: PathBuf,
    pub enforce_hardness_range: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            sources: "inputs/sources.jsonl".into(),
            format: SourceFormat::Jsonl,
            properties: None,
            contexts: "inputs/contexts".into(),
            enforce_hardness_range: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummarizeConfig {
    pub template: TemplateId,
    /// Concurrent backend calls.
    pub parallelism: usize,
    pub retry: RetryPolicy,
}

impl Default for SummarizeConfig {
    fn default() -> Self {
        Self {
            template: TemplateId::Updated,
            parallelism: 1,
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PurityConfig {
    pub k: usize,
    pub n_bins: usize,
    pub space: Space,
    pub properties: Vec<Property>,
    pub strategy: BinStrategy,
}

impl Default for PurityConfig {
    fn default() -> Self {
        Self {
            k: 10,
            n_bins: 3,
            space: Space::Projection,
            properties: Property::ALL.to_vec(),
            strategy: BinStrategy::Quantile,
        }
    }
}

/// Which embeddings the autoencoder is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingRows {
    Documents,
    /// Document embeddings plus embeddings of every sliding token window
    /// of every summary.
    DocumentsAndWindows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeStageConfig {
    pub train: SaeTrainConfig,
    pub training_rows: TrainingRows,
    pub window: usize,
    pub stride: usize,
}

impl Default for SaeStageConfig {
    fn default() -> Self {
        Self {
            train: SaeTrainConfig::default(),
            training_rows: TrainingRows::Documents,
            window: 16,
            stride: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub clusters: Vec<ClusterSpec>,
    pub top_n: usize,
    pub contexts: ContextConfig,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            clusters: Vec::new(),
            top_n: 5,
            contexts: ContextConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backend: BackendConfig,
    pub ingest: IngestConfig,
    pub summarize: SummarizeConfig,
    pub tsne: TsneConfig,
    pub purity: PurityConfig,
    pub sae: SaeStageConfig,
    pub analyze: AnalyzeConfig,
}

impl PipelineConfig {
    /// Settings for the bundled synthetic catalog: mock backend, one
    /// property-range cluster per concept group, and an autoencoder trained
    /// on documents plus windows (60 documents alone are too few rows for a
    /// dictionary wider than the corpus).
    pub fn fixture(spec: &FixtureSpec) -> Self {
        let clusters = spec
            .groups
            .iter()
            .map(|g| ClusterSpec {
                cluster_id: g.concept.clone(),
                selector: Selector::PropertyRange {
                    property: Property::PowlawGamma,
                    lo: g.gamma_range.0,
                    hi: g.gamma_range.1,
                },
            })
            .collect();
        Self {
            backend: BackendConfig::Mock(spec.mock_config()),
            ingest: IngestConfig::default(),
            summarize: SummarizeConfig::default(),
            tsne: TsneConfig {
                perplexity: 15.0,
                ..TsneConfig::default()
            },
            purity: PurityConfig {
                k: 5,
                ..PurityConfig::default()
            },
            sae: SaeStageConfig {
                train: SaeTrainConfig {
                    l1_coefficient: 1e-2,
                    steps: 5000,
                    ..SaeTrainConfig::default()
                },
                training_rows: TrainingRows::DocumentsAndWindows,
                ..SaeStageConfig::default()
            },
            analyze: AnalyzeConfig {
                clusters,
                ..AnalyzeConfig::default()
            },
        }
    }
}
