//! Cluster selection in the projection and SAE feature attribution.
//!
//! For a selected cluster, each feature gets a *strength* (mean activation
//! over members) and a *uniqueness* (strength over the mean activation on
//! non-members, plus [`UNIQUENESS_EPS`]). Features are ranked by the
//! geometric mean of the two rank-normalized scores. Top contexts are found
//! by re-embedding sliding token windows of the highest-activating summaries
//! and encoding them with the SAE.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::corpus::{Property, SourceRecord};
use crate::llmclient::LlmClient;
use crate::sae::{ActivationMatrix, SaeModel};
use crate::text::tokenize;
use crate::tsne::ProjectionResult;

pub const UNIQUENESS_EPS: f64 = 1e-9;
pub const UNIQUENESS_DISPLAY_CAP: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid selector: {0}")]
    InvalidSelector(String),
    #[error("cluster `{0}` selects no sources")]
    EmptySelection(String),
    #[error("cluster `{cluster}` covers every row; give an explicit background set")]
    NoBackground { cluster: String },
    #[error("unknown row id `{0}`")]
    UnknownRow(String),
    #[error("feature {feature} out of range (model has {d_hidden})")]
    FeatureOutOfRange { feature: usize, d_hidden: usize },
    #[error("n must be at least 1")]
    ZeroCount,
    #[error("window width and stride must be positive")]
    InvalidWindow,
    #[error("feature {0} has no contexts to label")]
    NoContexts(usize),
    #[error("report has no features")]
    EmptyReport,
    #[error("snippet for `{row_id}` at {char_start}..{char_end} does not match the summary")]
    SnippetMismatch {
        row_id: String,
        char_start: usize,
        char_end: usize,
    },
    #[error("SAE: {0}")]
    Sae(String),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selector {
    /// Vertices in projection coordinates, implicitly closed.
    Polygon { vertices: Vec<[f64; 2]> },
    /// Closed interval `[lo, hi]` on a catalog property.
    PropertyRange { property: Property, lo: f64, hi: f64 },
    Ids { ids: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub cluster_id: String,
    pub selector: Selector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSelection {
    pub cluster_id: String,
    pub selector: Selector,
    /// Sorted member ids.
    pub members: Vec<String>,
}

fn on_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let scale = (b[0] - a[0]).abs() + (b[1] - a[1]).abs();
    if cross.abs() > 1e-12 * scale.max(1.0) {
        return false;
    }
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Even-odd rule; points on an edge count as inside.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(p, a, b) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Members of `selector` among the projection rows. `records` is needed
/// only for property ranges.
pub fn select_cluster(
    cluster_id: &str,
    projection: &ProjectionResult,
    records: &[SourceRecord],
    selector: &Selector,
) -> Result<ClusterSelection> {
    let mut members: BTreeSet<String> = BTreeSet::new();
    match selector {
        Selector::Polygon { vertices } => {
            if vertices.len() < 3 {
                return Err(AnalysisError::InvalidSelector("polygon needs at least 3 vertices".into()));
            }
            if projection.points.ncols() != 2 {
                return Err(AnalysisError::InvalidSelector("polygon selection needs a 2-D projection".into()));
            }
            for (id, p) in projection.row_ids.iter().zip(projection.points.outer_iter()) {
                if point_in_polygon([p[0], p[1]], vertices) {
                    members.insert(id.clone());
                }
            }
        }
        Selector::PropertyRange { property, lo, hi } => {
            if !(lo <= hi) {
                return Err(AnalysisError::InvalidSelector(format!("range [{lo}, {hi}] is empty")));
            }
            let by_id: BTreeMap<&str, &SourceRecord> = records.iter().map(|r| (r.source_id.as_str(), r)).collect();
            for id in &projection.row_ids {
                let v = by_id.get(id.as_str()).and_then(|r| r.properties.get(*property));
                if v.is_some_and(|v| v >= *lo && v <= *hi) {
                    members.insert(id.clone());
                }
            }
        }
        Selector::Ids { ids } => {
            let known: BTreeSet<&str> = projection.row_ids.iter().map(String::as_str).collect();
            for id in ids {
                if !known.contains(id.as_str()) {
                    return Err(AnalysisError::UnknownRow(id.clone()));
                }
                members.insert(id.clone());
            }
        }
    }
    if members.is_empty() {
        return Err(AnalysisError::EmptySelection(cluster_id.to_string()));
    }
    Ok(ClusterSelection {
        cluster_id: cluster_id.to_string(),
        selector: selector.clone(),
        members: members.into_iter().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub strength: f64,
    /// Mean activation over non-members.
    pub background: f64,
    pub uniqueness: f64,
}

impl FeatureScore {
    pub fn uniqueness_display(&self) -> f64 {
        self.uniqueness.min(UNIQUENESS_DISPLAY_CAP)
    }
}

pub fn cluster_feature_scores(activations: &ActivationMatrix, cluster: &ClusterSelection) -> Result<Vec<FeatureScore>> {
    let index: BTreeMap<&str, usize> = activations
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut is_member = vec![false; activations.row_ids.len()];
    for id in &cluster.members {
        let &i = index.get(id.as_str()).ok_or_else(|| AnalysisError::UnknownRow(id.clone()))?;
        is_member[i] = true;
    }
    let n_in = is_member.iter().filter(|&&m| m).count();
    let n_out = is_member.len() - n_in;
    if n_out == 0 {
        return Err(AnalysisError::NoBackground {
            cluster: cluster.cluster_id.clone(),
        });
    }
    let mut sum_in = vec![0.0; activations.n_features()];
    let mut sum_out = vec![0.0; activations.n_features()];
    for (row, &m) in activations.data.outer_iter().zip(&is_member) {
        let acc = if m { &mut sum_in } else { &mut sum_out };
        for (s, v) in acc.iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok((0..activations.n_features())
        .map(|f| {
            let strength = sum_in[f] / n_in as f64;
            let background = sum_out[f] / n_out as f64;
            FeatureScore {
                feature: f,
                strength,
                background,
                uniqueness: strength / (background + UNIQUENESS_EPS),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub rank: usize,
    pub score: FeatureScore,
    /// Geometric mean of the rank-normalized strength and uniqueness.
    pub combined: f64,
}

/// Fraction of `values` that are `<= v`, for each `v` in `values`, as an
/// integer count.
fn rank_counts(values: &[f64]) -> Vec<usize> {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    values
        .iter()
        .map(|v| sorted.partition_point(|s| s.total_cmp(v).is_le()))
        .collect()
}

/// The best `n` live features (strength > 0) by combined rank score.
pub fn top_features(scores: &[FeatureScore], n: usize) -> Result<Vec<RankedFeature>> {
    if n == 0 {
        return Err(AnalysisError::ZeroCount);
    }
    let live: Vec<&FeatureScore> = scores.iter().filter(|s| s.strength > 0.0).collect();
    let m = live.len();
    let rs = rank_counts(&live.iter().map(|s| s.strength).collect::<Vec<_>>());
    let ru = rank_counts(&live.iter().map(|s| s.uniqueness).collect::<Vec<_>>());
    let mut order: Vec<usize> = (0..m).collect();
    // Integer products keep ties exact.
    order.sort_by(|&a, &b| {
        (rs[b] * ru[b])
            .cmp(&(rs[a] * ru[a]))
            .then(live[a].feature.cmp(&live[b].feature))
    });
    Ok(order
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(rank, i)| RankedFeature {
            rank: rank + 1,
            score: *live[i],
            combined: ((rs[i] * ru[i]) as f64).sqrt() / m as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowScoring {
    Windows,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub row_id: String,
    pub snippet: String,
    /// Character offsets of `snippet` in the stored summary.
    pub char_start: usize,
    pub char_end: usize,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureContexts {
    pub feature: usize,
    pub window_scoring: WindowScoring,
    pub contexts: Vec<Context>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    /// Tokens per window.
    pub window: usize,
    pub stride: usize,
    /// Contexts returned per feature.
    pub n_contexts: usize,
    /// Highest-activating documents whose windows are scored.
    pub max_documents: usize,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            window: 16,
            stride: 8,
            n_contexts: 20,
            max_documents: 20,
        }
    }
}

/// A run of `width` tokens with its character span in the source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub char_start: usize,
    pub char_end: usize,
    pub text: String,
}

/// Sliding token windows. The last window is truncated at the end of the
/// text; empty text yields none.
pub fn token_windows(text: &str, width: usize, stride: usize) -> Vec<Window> {
    let tokens = tokenize(text);
    let mut out = Vec::new();
    let mut start = 0;
    while start < tokens.len() {
        let end = (start + width).min(tokens.len());
        let (a, b) = (tokens[start], tokens[end - 1]);
        out.push(Window {
            char_start: a.char_start,
            char_end: b.char_end,
            text: text[a.byte_start..b.byte_end].to_string(),
        });
        if end == tokens.len() {
            break;
        }
        start += stride;
    }
    out
}

/// Top-activating windows for `feature`.
///
/// Documents are ranked by their activation on the feature (zero-activation
/// documents are skipped); the windows of the best `max_documents` are
/// re-embedded through `client` and encoded. If `client` is `None` or the
/// backend fails, each document contributes its first window scored by the
/// document activation and the result is flagged
/// [`WindowScoring::Unavailable`].
pub fn top_contexts(
    feature: usize,
    summaries: &BTreeMap<String, String>,
    activations: &ActivationMatrix,
    model: &SaeModel,
    client: Option<&LlmClient>,
    config: &ContextConfig,
) -> Result<FeatureContexts> {
    if feature >= model.d_hidden() {
        return Err(AnalysisError::FeatureOutOfRange {
            feature,
            d_hidden: model.d_hidden(),
        });
    }
    if config.window == 0 || config.stride == 0 {
        return Err(AnalysisError::InvalidWindow);
    }
    let mut docs: Vec<(&str, f64)> = activations
        .row_ids
        .iter()
        .zip(activations.data.column(feature))
        .filter(|(_, &a)| a > 0.0)
        .filter(|(id, _)| summaries.contains_key(id.as_str()))
        .map(|(id, &a)| (id.as_str(), a))
        .collect();
    docs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(b.0)));
    docs.truncate(config.max_documents);

    let mut candidates: Vec<(&str, Window)> = Vec::new();
    for &(id, _) in &docs {
        for w in token_windows(&summaries[id], config.window, config.stride) {
            candidates.push((id, w));
        }
    }

    if candidates.is_empty() {
        return Ok(FeatureContexts {
            feature,
            window_scoring: WindowScoring::Windows,
            contexts: Vec::new(),
        });
    }
    let scored = client.and_then(|c| {
        let texts: Vec<String> = candidates.iter().map(|(_, w)| w.text.clone()).collect();
        c.embed_texts(&texts).ok()
    });

    let mut contexts: Vec<Context>;
    let window_scoring;
    match scored {
        Some(vectors) => {
            let rows: Vec<f64> = vectors.into_iter().flatten().collect();
            let x = ArrayView2::from_shape((candidates.len(), rows.len() / candidates.len()), &rows)
                .map_err(|e| AnalysisError::Sae(e.to_string()))?;
            let acts = model.encode_rows(x).map_err(|e| AnalysisError::Sae(e.to_string()))?;
            contexts = candidates
                .into_iter()
                .zip(acts.column(feature))
                .map(|((id, w), &a)| Context {
                    row_id: id.to_string(),
                    snippet: w.text,
                    char_start: w.char_start,
                    char_end: w.char_end,
                    activation: a,
                })
                .collect();
            window_scoring = WindowScoring::Windows;
        }
        None => {
            contexts = docs
                .iter()
                .filter_map(|&(id, a)| {
                    token_windows(&summaries[id], config.window, config.stride)
                        .into_iter()
                        .next()
                        .map(|w| Context {
                            row_id: id.to_string(),
                            snippet: w.text,
                            char_start: w.char_start,
                            char_end: w.char_end,
                            activation: a,
                        })
                })
                .collect();
            window_scoring = WindowScoring::Unavailable;
        }
    }
    contexts.sort_by(|a, b| {
        b.activation
            .total_cmp(&a.activation)
            .then_with(|| a.row_id.cmp(&b.row_id))
            .then(a.char_start.cmp(&b.char_start))
    });
    contexts.truncate(config.n_contexts);
    Ok(FeatureContexts {
        feature,
        window_scoring,
        contexts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedFeature {
    pub rank: usize,
    pub feature: usize,
    pub strength: f64,
    pub uniqueness: f64,
    pub combined: f64,
    /// The feature is in the top list of no other analyzed cluster.
    pub cluster_exclusive: bool,
    pub window_scoring: WindowScoring,
    pub contexts: Vec<Context>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureReport {
    pub cluster_id: String,
    pub selector: Selector,
    pub n_members: usize,
    pub features: Vec<ReportedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub top_n: usize,
    pub context_config: ContextConfig,
    pub clusters: Vec<FeatureReport>,
}

/// Rank features for every cluster and attach their top contexts.
pub fn analyze_clusters(
    selections: &[ClusterSelection],
    activations: &ActivationMatrix,
    summaries: &BTreeMap<String, String>,
    model: &SaeModel,
    client: Option<&LlmClient>,
    top_n: usize,
    config: &ContextConfig,
) -> Result<AnalysisReport> {
    let mut ranked = Vec::with_capacity(selections.len());
    for sel in selections {
        let scores = cluster_feature_scores(activations, sel)?;
        ranked.push(top_features(&scores, top_n)?);
    }
    let mut appearances: BTreeMap<usize, usize> = BTreeMap::new();
    for list in &ranked {
        for r in list {
            *appearances.entry(r.score.feature).or_default() += 1;
        }
    }
    let mut clusters = Vec::with_capacity(selections.len());
    for (sel, list) in selections.iter().zip(ranked) {
        let mut features = Vec::with_capacity(list.len());
        for r in list {
            let ctx = top_contexts(r.score.feature, summaries, activations, model, client, config)?;
            features.push(ReportedFeature {
                rank: r.rank,
                feature: r.score.feature,
                strength: r.score.strength,
                uniqueness: r.score.uniqueness,
                combined: r.combined,
                cluster_exclusive: appearances[&r.score.feature] == 1,
                window_scoring: ctx.window_scoring,
                contexts: ctx.contexts,
            });
        }
        clusters.push(FeatureReport {
            cluster_id: sel.cluster_id.clone(),
            selector: sel.selector.clone(),
            n_members: sel.members.len(),
            features,
        });
    }
    Ok(AnalysisReport {
        top_n,
        context_config: config.clone(),
        clusters,
    })
}

/// Check that every snippet sits at its recorded offsets in its summary.
pub fn verify_snippets(report: &AnalysisReport, summaries: &BTreeMap<String, String>) -> Result<()> {
    for c in report.clusters.iter().flat_map(|r| &r.features).flat_map(|f| &f.contexts) {
        let found = summaries.get(&c.row_id).map(|s| {
            s.chars()
                .skip(c.char_start)
                .take(c.char_end - c.char_start)
                .collect::<String>()
        });
        if found.as_deref() != Some(c.snippet.as_str()) {
            return Err(AnalysisError::SnippetMismatch {
                row_id: c.row_id.clone(),
                char_start: c.char_start,
                char_end: c.char_end,
            });
        }
    }
    Ok(())
}

const LABEL_INSTRUCTIONS: &str = "Each feature below is a direction learned by a sparse autoencoder trained on \
embeddings of summaries of X-ray sources. The snippets are the text windows that activate the feature most \
strongly, with their activation values. Give each feature a short label (a few words) naming the concept the \
snippets share, and a one-sentence justification. If no shared concept is apparent, answer \"unclear\".";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelContext {
    pub row_id: String,
    pub snippet: String,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFeature {
    pub feature: usize,
    pub contexts: Vec<LabelContext>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelPayload {
    pub cluster_id: String,
    pub instructions: String,
    pub features: Vec<LabelFeature>,
}

/// Self-contained labeling request for an external labeler.
pub fn label_payload(report: &FeatureReport) -> Result<LabelPayload> {
    if report.features.is_empty() {
        return Err(AnalysisError::EmptyReport);
    }
    let mut features = Vec::with_capacity(report.features.len());
    for f in &report.features {
        if f.contexts.is_empty() {
            return Err(AnalysisError::NoContexts(f.feature));
        }
        features.push(LabelFeature {
            feature: f.feature,
            contexts: f
                .contexts
                .iter()
                .map(|c| LabelContext {
                    row_id: c.row_id.clone(),
                    snippet: c.snippet.clone(),
                    activation: c.activation,
                })
                .collect(),
        });
    }
    Ok(LabelPayload {
        cluster_id: report.cluster_id.clone(),
        instructions: LABEL_INSTRUCTIONS.to_string(),
        features,
    })
}

fn md_cell(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").replace('|', "\\|")
}

impl AnalysisReport {
    /// One row per (cluster, ranked feature), showing the best context.
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        s.push_str("| Cluster | Rank | Feature | Strength | Uniqueness | Exclusive | Top context |\n");
        s.push_str("|---|---:|---:|---:|---:|:---:|---|\n");
        for c in &self.clusters {
            for f in &c.features {
                let top = f.contexts.first().map(|x| md_cell(&x.snippet)).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "| {} | {} | {} | {:.4} | {:.4} | {} | {} |",
                    md_cell(&c.cluster_id),
                    f.rank,
                    f.feature,
                    f.strength,
                    f.uniqueness.min(UNIQUENESS_DISPLAY_CAP),
                    if f.cluster_exclusive { "yes" } else { "no" },
                    top
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsne::TsneConfig;
    use ndarray::{array, Array2};

    fn projection(points: Array2<f64>) -> ProjectionResult {
        ProjectionResult {
            row_ids: (0..points.nrows()).map(|i| format!("s{i}")).collect(),
            points,
            kl_history: vec![],
            config: TsneConfig::default(),
        }
    }

    #[test]
    fn unit_square_polygon() {
        let p = projection(array![[0.5, 0.5], [2.0, 2.0], [1.0, 0.3]]);
        let sel = select_cluster(
            "c",
            &p,
            &[],
            &Selector::Polygon {
                vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            },
        )
        .unwrap();
        // (1.0, 0.3) lies on the right edge.
        assert_eq!(sel.members, vec!["s0", "s2"]);
    }

    #[test]
    fn selector_errors() {
        let p = projection(array![[5.0, 5.0]]);
        let square = Selector::Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]],
        };
        assert_eq!(
            select_cluster("c", &p, &[], &square).unwrap_err(),
            AnalysisError::EmptySelection("c".into())
        );
        let two = Selector::Polygon {
            vertices: vec![[0.0, 0.0], [1.0, 0.0]],
        };
        assert!(matches!(
            select_cluster("c", &p, &[], &two),
            Err(AnalysisError::InvalidSelector(_))
        ));
        let bad_range = Selector::PropertyRange {
            property: Property::BbKt,
            lo: 2.0,
            hi: 1.0,
        };
        assert!(matches!(
            select_cluster("c", &p, &[], &bad_range),
            Err(AnalysisError::InvalidSelector(_))
        ));
        let ids = Selector::Ids { ids: vec!["nope".into()] };
        assert_eq!(
            select_cluster("c", &p, &[], &ids).unwrap_err(),
            AnalysisError::UnknownRow("nope".into())
        );
    }

    fn acts(data: Array2<f64>) -> ActivationMatrix {
        ActivationMatrix {
            row_ids: (0..data.nrows()).map(|i| format!("s{i}")).collect(),
            data,
        }
    }

    fn cluster(ids: &[&str]) -> ClusterSelection {
        ClusterSelection {
            cluster_id: "c".into(),
            selector: Selector::Ids {
                ids: ids.iter().map(|s| s.to_string()).collect(),
            },
            members: ids.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn exclusive_and_background_features() {
        let a = acts(array![[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 2.0], [0.0, 1.0, 0.0]]);
        let s = cluster_feature_scores(&a, &cluster(&["s0", "s1"])).unwrap();
        assert_eq!(s[0].strength, 1.0);
        assert_eq!(s[0].uniqueness, 1.0 / UNIQUENESS_EPS);
        assert_eq!(s[0].uniqueness_display(), UNIQUENESS_DISPLAY_CAP);
        assert_eq!(s[1].strength, 1.0);
        assert!((s[1].uniqueness - 1.0).abs() < 1e-8);
        assert_eq!(s[2].uniqueness, 0.0);
        let top = top_features(&s, 5).unwrap();
        assert_eq!(top.len(), 2);
        assert_eq!(top[0].score.feature, 0);
    }

    #[test]
    fn whole_dataset_cluster_has_no_background() {
        let a = acts(array![[1.0], [2.0]]);
        assert!(matches!(
            cluster_feature_scores(&a, &cluster(&["s0", "s1"])),
            Err(AnalysisError::NoBackground { .. })
        ));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let score = |f, s, u| FeatureScore {
            feature: f,
            strength: s,
            background: 0.0,
            uniqueness: u,
        };
        let top = top_features(&[score(3, 1.0, 2.0), score(1, 1.0, 2.0), score(2, 0.5, 1.0)], 2).unwrap();
        assert_eq!(top.iter().map(|r| r.score.feature).collect::<Vec<_>>(), vec![1, 3]);
        assert!(top_features(&[], 1).unwrap().is_empty());
        assert_eq!(top_features(&[], 0).unwrap_err(), AnalysisError::ZeroCount);
    }

    #[test]
    fn windows_cover_text_with_offsets() {
        let text = "a b c d e f g h i j k";
        let w = token_windows(text, 4, 2);
        let snippets: Vec<&str> = w.iter().map(|w| w.text.as_str()).collect();
        assert_eq!(snippets, vec!["a b c d", "c d e f", "e f g h", "g h i j", "i j k"]);
        assert_eq!((w[1].char_start, w[1].char_end), (4, 11));
        assert_eq!(token_windows("x y", 16, 8).len(), 1);
        assert!(token_windows("   ", 16, 8).is_empty());
    }

    fn report(contexts: usize) -> FeatureReport {
        FeatureReport {
            cluster_id: "c".into(),
            selector: Selector::Ids { ids: vec!["s0".into()] },
            n_members: 1,
            features: vec![ReportedFeature {
                rank: 1,
                feature: 4,
                strength: 1.0,
                uniqueness: 2.0,
                combined: 1.0,
                cluster_exclusive: true,
                window_scoring: WindowScoring::Windows,
                contexts: (0..contexts)
                    .map(|i| Context {
                        row_id: format!("s{i}"),
                        snippet: format!("snippet | {i}\n\"quoted\""),
                        char_start: 0,
                        char_end: 3,
                        activation: 0.5 + i as f64,
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn label_payload_passes_snippets_through() {
        let r = report(3);
        let p = label_payload(&r).unwrap();
        assert_eq!(p.features.len(), 1);
        let got: Vec<&str> = p.features[0].contexts.iter().map(|c| c.snippet.as_str()).collect();
        let want: Vec<&str> = r.features[0].contexts.iter().map(|c| c.snippet.as_str()).collect();
        assert_eq!(got, want);
        let back: LabelPayload = serde_json::from_str(&serde_json::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        assert_eq!(label_payload(&report(0)).unwrap_err(), AnalysisError::NoContexts(4));
    }

    #[test]
    fn markdown_escapes_cells() {
        let md = AnalysisReport {
            top_n: 5,
            context_config: ContextConfig::default(),
            clusters: vec![report(1)],
        }
        .to_markdown();
        assert!(md.contains("| c | 1 | 4 | 1.0000 | 2.0000 | yes | snippet \\| 0 \"quoted\" |"), "{md}");
    }
}
