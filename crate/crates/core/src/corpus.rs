//! Source records, their physical properties, and the joined analysis corpus.
//!
//! The canonical interchange format is JSONL with one flat object per line:
//!
//! ```text
//! {"source_id":"s1","name_ids":["2CXO J1234"],"source_type":"YSO","ra":10.5,"dec":-3.25,"hard_hs":-0.2,"powlaw_gamma":1.7,"var_index_b":4}
//! ```
//!
//! Property fields keep the catalog column names (`hard_hs`, `bb_kt`,
//! `powlaw_gamma`, `var_index_b`, `prob_index_b`). Missing values are
//! omitted (or `null` on input). CSV is accepted with a header row; an
//! empty cell means missing and `name_ids` is `;`-separated.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::llmclient::{EmbeddingMatrix, SummaryDoc};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: malformed row: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate source_id `{id}` at line {line} (first seen at line {first})")]
    DuplicateId { id: String, line: usize, first: usize },
    #[error("duplicate source_id `{0}`")]
    DuplicateRecord(String),
    #[error("duplicate summary for source_id `{0}`")]
    DuplicateSummary(String),
    #[error("summary references unknown source_id `{0}`")]
    UnknownSummary(String),
    #[error("embedding row references unknown source_id `{0}`")]
    UnknownEmbeddingRow(String),
    #[error("properties table references unknown source_id `{0}`")]
    UnknownPropertiesRow(String),
    #[error("invalid embedding matrix: {0}")]
    Embedding(String),
    #[error("unknown property `{0}` (expected one of hard_hs, bb_kt, powlaw_gamma, var_index_b, prob_index_b)")]
    UnknownProperty(String),
    #[error("property `{property}` has {present} present values, need at least {n_bins}")]
    TooFewValues {
        property: String,
        present: usize,
        n_bins: usize,
    },
    #[error("all present values of `{0}` are identical; quantile bins are undefined")]
    IdenticalValues(String),
    #[error("invalid binning: {0}")]
    InvalidBins(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// The catalog properties carried per source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    HardHs,
    BbKt,
    PowlawGamma,
    VarIndexB,
    ProbIndexB,
}

impl Property {
    pub const ALL: [Property; 5] = [
        Property::HardHs,
        Property::BbKt,
        Property::PowlawGamma,
        Property::VarIndexB,
        Property::ProbIndexB,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Property::HardHs => "hard_hs",
            Property::BbKt => "bb_kt",
            Property::PowlawGamma => "powlaw_gamma",
            Property::VarIndexB => "var_index_b",
            Property::ProbIndexB => "prob_index_b",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Property {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| CorpusError::UnknownProperty(s.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhysicalProperties {
    /// Hard (2.0-7.0 keV) minus soft (0.5-1.2 keV) band hardness ratio.
    pub hard_hs: Option<f64>,
    /// Blackbody temperature kT, keV.
    pub bb_kt: Option<f64>,
    /// Power-law photon index.
    pub powlaw_gamma: Option<f64>,
    /// Variability index, integer in [0,10].
    pub var_index_b: Option<i64>,
    pub prob_index_b: Option<f64>,
}

impl PhysicalProperties {
    pub fn get(&self, property: Property) -> Option<f64> {
        match property {
            Property::HardHs => self.hard_hs,
            Property::BbKt => self.bb_kt,
            Property::PowlawGamma => self.powlaw_gamma,
            Property::VarIndexB => self.var_index_b.map(|v| v as f64),
            Property::ProbIndexB => self.prob_index_b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkyPosition {
    pub ra: f64,
    pub dec: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceRecord {
    pub source_id: String,
    pub name_ids: Vec<String>,
    pub source_type: String,
    pub sky_position: Option<SkyPosition>,
    pub properties: PhysicalProperties,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Jsonl,
    Csv,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "jsonl" => Ok(SourceFormat::Jsonl),
            "csv" => Ok(SourceFormat::Csv),
            other => Err(format!("unknown source format `{other}` (expected jsonl or csv)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    /// Reject `hard_hs` outside [-1, 1].
    pub enforce_hardness_range: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            enforce_hardness_range: true,
        }
    }
}

/// A rejected input row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub line: usize,
    pub source_id: Option<String>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.source_id {
            Some(id) => write!(f, "line {} ({id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub records: Vec<SourceRecord>,
    pub rejected: Vec<Diagnostic>,
}

/// Flat on-disk row. Numbers are kept as `f64` until validation so that
/// out-of-range or non-integral values produce diagnostics instead of
/// parse failures.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RecordRow {
    source_id: String,
    #[serde(default)]
    name_ids: Vec<String>,
    #[serde(default)]
    source_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ra: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dec: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hard_hs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bb_kt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    powlaw_gamma: Option<f64>,
    #[serde(
        default,
        skip_serializing_if = "Option::is_none",
        serialize_with = "serialize_integral"
    )]
    var_index_b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prob_index_b: Option<f64>,
}

fn serialize_integral<S: serde::Serializer>(
    v: &Option<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 => s.serialize_i64(*x as i64),
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_none(),
    }
}

impl From<&SourceRecord> for RecordRow {
    fn from(r: &SourceRecord) -> Self {
        let p = &r.properties;
        RecordRow {
            source_id: r.source_id.clone(),
            name_ids: r.name_ids.clone(),
            source_type: r.source_type.clone(),
            ra: r.sky_position.map(|s| s.ra),
            dec: r.sky_position.map(|s| s.dec),
            hard_hs: p.hard_hs,
            bb_kt: p.bb_kt,
            powlaw_gamma: p.powlaw_gamma,
            var_index_b: p.var_index_b.map(|v| v as f64),
            prob_index_b: p.prob_index_b,
        }
    }
}

fn check_finite(name: &str, v: Option<f64>) -> std::result::Result<(), String> {
    match v {
        Some(x) if !x.is_finite() => Err(format!("{name} must be finite, got {x}")),
        _ => Ok(()),
    }
}

impl RecordRow {
    fn validate(self, opts: &ValidationOptions) -> std::result::Result<SourceRecord, String> {
        if self.source_id.trim().is_empty() {
            return Err("source_id is empty".into());
        }
        if self.name_ids.is_empty() || self.name_ids.iter().all(|n| n.trim().is_empty()) {
            return Err("name_ids must contain at least one alias".into());
        }
        for (name, v) in [
            ("ra", self.ra),
            ("dec", self.dec),
            ("hard_hs", self.hard_hs),
            ("bb_kt", self.bb_kt),
            ("powlaw_gamma", self.powlaw_gamma),
            ("var_index_b", self.var_index_b),
            ("prob_index_b", self.prob_index_b),
        ] {
            check_finite(name, v)?;
        }
        let sky_position = match (self.ra, self.dec) {
            (None, None) => None,
            (Some(ra), Some(dec)) => {
                if !(0.0..360.0).contains(&ra) {
                    return Err(format!("ra must lie in [0, 360), got {ra}"));
                }
                if !(-90.0..=90.0).contains(&dec) {
                    return Err(format!("dec must lie in [-90, 90], got {dec}"));
                }
                Some(SkyPosition { ra, dec })
            }
            _ => return Err("ra and dec must be given together".into()),
        };
        if let Some(h) = self.hard_hs {
            if opts.enforce_hardness_range && !(-1.0..=1.0).contains(&h) {
                return Err(format!("hard_hs must lie in [-1,1], got {h}"));
            }
        }
        if let Some(kt) = self.bb_kt {
            if kt <= 0.0 {
                return Err(format!("bb_kt must be strictly positive, got {kt}"));
            }
        }
        let var_index_b = match self.var_index_b {
            None => None,
            Some(v) if v.fract() == 0.0 && (0.0..=10.0).contains(&v) => Some(v as i64),
            Some(v) => {
                return Err(format!(
                    "var_index_b must be an integer in [0,10], got {v}"
                ))
            }
        };
        Ok(SourceRecord {
            source_id: self.source_id,
            name_ids: self.name_ids,
            source_type: self.source_type,
            sky_position,
            properties: PhysicalProperties {
                hard_hs: self.hard_hs,
                bb_kt: self.bb_kt,
                powlaw_gamma: self.powlaw_gamma,
                var_index_b,
                prob_index_b: self.prob_index_b,
            },
        })
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load source records from `path`.
///
/// Rows that parse but violate a record invariant are returned in
/// [`LoadOutcome::rejected`], one diagnostic per row. Unparseable rows and
/// duplicate ids abort the load.
pub fn load_sources(
    path: &Path,
    format: SourceFormat,
    opts: &ValidationOptions,
) -> Result<LoadOutcome> {
    let text = read_to_string(path)?;
    let rows = match format {
        SourceFormat::Jsonl => parse_jsonl_rows(path, &text)?,
        SourceFormat::Csv => parse_csv_rows(path, &text, true)?,
    };
    validate_rows(rows, opts)
}

pub fn parse_sources_jsonl(text: &str, opts: &ValidationOptions) -> Result<LoadOutcome> {
    validate_rows(parse_jsonl_rows(Path::new("<memory>"), text)?, opts)
}

fn validate_rows(rows: Vec<(usize, RecordRow)>, opts: &ValidationOptions) -> Result<LoadOutcome> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut out = LoadOutcome::default();
    for (line, row) in rows {
        if !row.source_id.is_empty() {
            if let Some(&first) = seen.get(&row.source_id) {
                return Err(CorpusError::DuplicateId {
                    id: row.source_id,
                    line,
                    first,
                });
            }
            seen.insert(row.source_id.clone(), line);
        }
        let id = (!row.source_id.is_empty()).then(|| row.source_id.clone());
        match row.validate(opts) {
            Ok(rec) => out.records.push(rec),
            Err(message) => out.rejected.push(Diagnostic {
                line,
                source_id: id,
                message,
            }),
        }
    }
    Ok(out)
}

fn parse_jsonl_rows(path: &Path, text: &str) -> Result<Vec<(usize, RecordRow)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordRow = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push((i + 1, row));
    }
    Ok(rows)
}

fn parse_csv_rows(path: &Path, text: &str, full_records: bool) -> Result<Vec<(usize, RecordRow)>> {
    let malformed = |line: usize, message: String| CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let id_col = col("source_id").ok_or_else(|| malformed(1, "missing `source_id` column".into()))?;
    if full_records {
        for required in ["name_ids", "source_type"] {
            if col(required).is_none() {
                return Err(malformed(1, format!("missing `{required}` column")));
            }
        }
    }
    let numeric_cols: Vec<(&str, Option<usize>)> = [
        "ra",
        "dec",
        "hard_hs",
        "bb_kt",
        "powlaw_gamma",
        "var_index_b",
        "prob_index_b",
    ]
    .into_iter()
    .map(|n| (n, col(n)))
    .collect();

    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        let cell = |c: Option<usize>| c.and_then(|c| rec.get(c)).filter(|s| !s.is_empty());
        let mut row = RecordRow {
            source_id: rec.get(id_col).unwrap_or_default().to_string(),
            name_ids: cell(col("name_ids"))
                .map(|s| {
                    s.split(';')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                })
                .unwrap_or_default(),
            source_type: cell(col("source_type")).unwrap_or_default().to_string(),
            ..RecordRow::default()
        };
        for (name, c) in &numeric_cols {
            let Some(raw) = cell(*c) else { continue };
            let v: f64 = raw
                .parse()
                .map_err(|_| malformed(line, format!("column `{name}`: `{raw}` is not a number")))?;
            let slot = match *name {
                "ra" => &mut row.ra,
                "dec" => &mut row.dec,
                "hard_hs" => &mut row.hard_hs,
                "bb_kt" => &mut row.bb_kt,
                "powlaw_gamma" => &mut row.powlaw_gamma,
                "var_index_b" => &mut row.var_index_b,
                _ => &mut row.prob_index_b,
            };
            *slot = Some(v);
        }
        rows.push((line, row));
    }
    Ok(rows)
}

/// Canonical JSONL encoding of `records`.
pub fn write_sources_jsonl<W: Write>(mut w: W, records: &[SourceRecord]) -> io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, &RecordRow::from(r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_sources(path: &Path, records: &[SourceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_sources_jsonl(&mut buf, records).expect("writing to Vec cannot fail");
    fs::write(path, buf).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Properties keyed by source id, as read from a properties CSV.
pub type PropertiesTable = BTreeMap<String, PhysicalProperties>;

/// Load a properties CSV (`source_id` plus any property columns). Rows
/// failing validation are reported like in [`load_sources`].
pub fn load_properties_csv(
    path: &Path,
    opts: &ValidationOptions,
) -> Result<(PropertiesTable, Vec<Diagnostic>)> {
    let text = read_to_string(path)?;
    let mut rows = parse_csv_rows(path, &text, false)?;
    // Identity fields are not part of a properties table.
    for (_, row) in rows.iter_mut() {
        row.name_ids = vec![row.source_id.clone()];
        row.ra = None;
        row.dec = None;
    }
    let outcome = validate_rows(rows, opts)?;
    let table = outcome
        .records
        .into_iter()
        .map(|r| (r.source_id, r.properties))
        .collect();
    Ok((table, outcome.rejected))
}

/// Overwrite record properties from `table`. Every table row must name a
/// known record. Returns the number of records updated.
pub fn merge_properties(records: &mut [SourceRecord], table: &PropertiesTable) -> Result<usize> {
    let index: BTreeMap<&str, usize> = records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.source_id.as_str(), i))
        .collect();
    let mut updates = Vec::with_capacity(table.len());
    for (id, props) in table {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| CorpusError::UnknownPropertiesRow(id.clone()))?;
        updates.push((i, props.clone()));
    }
    let n = updates.len();
    for (i, props) in updates {
        records[i].properties = props;
    }
    Ok(n)
}

/// Records joined with their summaries and (optionally) embeddings.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub records: Vec<SourceRecord>,
    pub summaries: BTreeMap<String, SummaryDoc>,
    pub embeddings: Option<EmbeddingMatrix>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JoinStats {
    pub records: usize,
    pub summaries_matched: usize,
    pub embedding_rows_matched: usize,
    /// Records having a summary and, when embeddings are given, a row.
    pub aligned: usize,
    pub records_without_summary: Vec<String>,
    pub records_without_embedding: Vec<String>,
}

pub fn join_corpus(
    records: Vec<SourceRecord>,
    summaries: Vec<SummaryDoc>,
    embeddings: Option<EmbeddingMatrix>,
) -> Result<(Corpus, JoinStats)> {
    let mut ids = BTreeSet::new();
    for r in &records {
        if !ids.insert(r.source_id.clone()) {
            return Err(CorpusError::DuplicateRecord(r.source_id.clone()));
        }
    }
    let mut by_id = BTreeMap::new();
    for s in summaries {
        if !ids.contains(&s.source_id) {
            return Err(CorpusError::UnknownSummary(s.source_id));
        }
        let id = s.source_id.clone();
        if by_id.insert(id.clone(), s).is_some() {
            return Err(CorpusError::DuplicateSummary(id));
        }
    }
    let mut embedded = BTreeSet::new();
    if let Some(m) = &embeddings {
        m.validate()
            .map_err(|e| CorpusError::Embedding(e.to_string()))?;
        for id in &m.row_ids {
            if !ids.contains(id) {
                return Err(CorpusError::UnknownEmbeddingRow(id.clone()));
            }
            embedded.insert(id.clone());
        }
    }
    let mut stats = JoinStats {
        records: records.len(),
        summaries_matched: by_id.len(),
        embedding_rows_matched: embedded.len(),
        ..JoinStats::default()
    };
    for r in &records {
        let has_summary = by_id.contains_key(&r.source_id);
        let has_embedding = embeddings.is_none() || embedded.contains(&r.source_id);
        if !has_summary {
            stats.records_without_summary.push(r.source_id.clone());
        }
        if embeddings.is_some() && !has_embedding {
            stats.records_without_embedding.push(r.source_id.clone());
        }
        if has_summary && has_embedding {
            stats.aligned += 1;
        }
    }
    Ok((
        Corpus {
            records,
            summaries: by_id,
            embeddings,
        },
        stats,
    ))
}

impl Corpus {
    pub fn record(&self, source_id: &str) -> Option<&SourceRecord> {
        self.records.iter().find(|r| r.source_id == source_id)
    }

    /// Present values of `property` as `(source_id, value)` in record order.
    pub fn property_values(&self, property: Property) -> Vec<(String, f64)> {
        property_values(&self.records, property)
    }
}

pub fn property_values(records: &[SourceRecord], property: Property) -> Vec<(String, f64)> {
    records
        .iter()
        .filter_map(|r| r.properties.get(property).map(|v| (r.source_id.clone(), v)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinStrategy {
    Quantile,
    /// `n_bins + 1` ascending boundaries; bin `b` covers
    /// `[edges[b], edges[b+1])`, the last bin is closed on the right.
    FixedEdges { edges: Vec<f64> },
}

impl BinStrategy {
    /// Integer bins over `lo..=hi` split into `n_bins` contiguous runs, with
    /// boundaries at half-integers (e.g. `var_index_b` in 0..=10).
    pub fn integer_bins(lo: i64, hi: i64, n_bins: usize) -> Result<Self> {
        let span = (hi - lo + 1) as usize;
        if hi < lo || n_bins == 0 || n_bins > span {
            return Err(CorpusError::InvalidBins(format!(
                "cannot split {lo}..={hi} into {n_bins} integer bins"
            )));
        }
        let mut edges = vec![lo as f64 - 0.5];
        for b in 1..n_bins {
            let start = lo + (b * span / n_bins) as i64;
            edges.push(start as f64 - 0.5);
        }
        edges.push(hi as f64 + 0.5);
        Ok(BinStrategy::FixedEdges { edges })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinAssignment {
    pub property_name: String,
    pub strategy: BinStrategy,
    pub n_bins: usize,
    pub labels: BTreeMap<String, usize>,
    /// `n_bins + 1` ascending boundaries (outer ones are the value range
    /// under the quantile strategy).
    pub edges: Vec<f64>,
}

pub fn assign_bins(
    corpus: &Corpus,
    property: Property,
    n_bins: usize,
    strategy: BinStrategy,
) -> Result<BinAssignment> {
    bin_values(property.name(), &corpus.property_values(property), n_bins, strategy)
}

/// Bin arbitrary `(id, value)` pairs. Ties in value are ordered by id so the
/// result does not depend on input order.
pub fn bin_values(
    property_name: &str,
    values: &[(String, f64)],
    n_bins: usize,
    strategy: BinStrategy,
) -> Result<BinAssignment> {
    if n_bins == 0 {
        return Err(CorpusError::InvalidBins("n_bins must be positive".into()));
    }
    if values.len() < n_bins {
        return Err(CorpusError::TooFewValues {
            property: property_name.to_string(),
            present: values.len(),
            n_bins,
        });
    }
    if let Some((id, v)) = values.iter().find(|(_, v)| !v.is_finite()) {
        return Err(CorpusError::InvalidBins(format!(
            "non-finite value {v} for `{id}`"
        )));
    }
    let mut sorted: Vec<&(String, f64)> = values.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let m = sorted.len();
    let lo = sorted[0].1;
    let hi = sorted[m - 1].1;

    let edges = match &strategy {
        BinStrategy::Quantile => {
            if n_bins > 1 && lo == hi {
                return Err(CorpusError::IdenticalValues(property_name.to_string()));
            }
            let mut edges = Vec::with_capacity(n_bins + 1);
            edges.push(lo);
            for b in 1..n_bins {
                let start = b * m / n_bins;
                edges.push(0.5 * (sorted[start - 1].1 + sorted[start].1));
            }
            edges.push(hi);
            edges
        }
        BinStrategy::FixedEdges { edges } => {
            if edges.len() != n_bins + 1 {
                return Err(CorpusError::InvalidBins(format!(
                    "{} edges given for {n_bins} bins (need {})",
                    edges.len(),
                    n_bins + 1
                )));
            }
            if edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(CorpusError::InvalidBins(
                    "edges must be strictly ascending".into(),
                ));
            }
            if lo < edges[0] || hi > edges[n_bins] {
                return Err(CorpusError::InvalidBins(format!(
                    "values span [{lo}, {hi}] outside edges [{}, {}]",
                    edges[0], edges[n_bins]
                )));
            }
            edges.clone()
        }
    };

    let interior = &edges[1..n_bins];
    let labels = values
        .iter()
        .map(|(id, v)| {
            let bin = interior.iter().take_while(|&&e| *v >= e).count();
            (id.clone(), bin)
        })
        .collect();
    Ok(BinAssignment {
        property_name: property_name.to_string(),
        strategy,
        n_bins,
        labels,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn rec(id: &str) -> SourceRecord {
        SourceRecord {
            source_id: id.into(),
            name_ids: vec![format!("2CXO {id}")],
            source_type: "X".into(),
            sky_position: None,
            properties: PhysicalProperties::default(),
        }
    }

    #[test]
    fn empty_file_gives_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.jsonl", "");
        let out = load_sources(&p, SourceFormat::Jsonl, &Default::default()).unwrap();
        assert!(out.records.is_empty());
        assert!(out.rejected.is_empty());
    }

    #[test]
    fn variability_index_out_of_range_is_diagnosed() {
        let body = r#"{"source_id":"a","name_ids":["A"],"source_type":"YSO","var_index_b":11}
{"source_id":"b","name_ids":["B"],"source_type":"YSO","var_index_b":10}
"#;
        let out = parse_sources_jsonl(body, &Default::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].line, 1);
        assert!(out.rejected[0].message.contains("[0,10]"), "{}", out.rejected[0]);
    }

    #[test]
    fn every_invariant_violation_is_one_diagnostic() {
        let body = [
            r#"{"source_id":"a","name_ids":[],"source_type":"T"}"#,
            r#"{"source_id":"b","name_ids":["B"],"source_type":"T","bb_kt":0.0}"#,
            r#"{"source_id":"c","name_ids":["C"],"source_type":"T","hard_hs":1.5}"#,
            r#"{"source_id":"d","name_ids":["D"],"source_type":"T","ra":360.0,"dec":0.0}"#,
            r#"{"source_id":"e","name_ids":["E"],"source_type":"T","ra":10.0}"#,
            r#"{"source_id":"f","name_ids":["F"],"source_type":"T","var_index_b":2.5}"#,
            r#"{"source_id":"g","name_ids":["G"],"source_type":"T","dec":-90.0,"ra":0.0}"#,
        ]
        .join("\n");
        let out = parse_sources_jsonl(&body, &Default::default()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].source_id, "g");
        let lines: Vec<usize> = out.rejected.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn hardness_range_check_can_be_disabled() {
        let body = r#"{"source_id":"c","name_ids":["C"],"source_type":"T","hard_hs":1.5}"#;
        let opts = ValidationOptions {
            enforce_hardness_range: false,
        };
        let out = parse_sources_jsonl(body, &opts).unwrap();
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let body = "{\"source_id\":\"a\",\"name_ids\":[\"A\"],\"source_type\":\"T\"}\n\nnot json\n";
        let err = parse_sources_jsonl(body, &Default::default()).unwrap_err();
        match err {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_id_is_an_error() {
        let body = r#"{"source_id":"a","name_ids":["A"],"source_type":"T"}
{"source_id":"a","name_ids":["A2"],"source_type":"T"}"#;
        let err = parse_sources_jsonl(body, &Default::default()).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, first: 1, .. }));
    }

    #[test]
    fn unreadable_file() {
        let err = load_sources(
            Path::new("/nonexistent/sources.jsonl"),
            SourceFormat::Jsonl,
            &Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn csv_sources_with_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s.csv",
            "source_id,name_ids,source_type,ra,dec,hard_hs,powlaw_gamma,var_index_b\n\
             a,A;A2,YSO,10.0,-5.0,0.1,,3\n\
             b,B,QSO,,,,2.1,\n",
        );
        let out = load_sources(&p, SourceFormat::Csv, &Default::default()).unwrap();
        assert!(out.rejected.is_empty());
        assert_eq!(out.records[0].name_ids, vec!["A", "A2"]);
        assert_eq!(out.records[0].properties.var_index_b, Some(3));
        assert_eq!(out.records[0].properties.powlaw_gamma, None);
        assert_eq!(out.records[1].sky_position, None);
        assert_eq!(out.records[1].properties.powlaw_gamma, Some(2.1));
    }

    #[test]
    fn csv_bad_number_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "s.csv", "source_id,name_ids,source_type,bb_kt\na,A,T,hot\n");
        let err = load_sources(&p, SourceFormat::Csv, &Default::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 2, .. }));
    }

    #[test]
    fn properties_csv_merges() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "p.csv", "source_id,bb_kt,var_index_b\na,0.5,\nb,,12\n");
        let (table, rejected) = load_properties_csv(&p, &Default::default()).unwrap();
        assert_eq!(table.len(), 1);
        assert_eq!(rejected.len(), 1);
        let mut records = vec![rec("a"), rec("b")];
        assert_eq!(merge_properties(&mut records, &table).unwrap(), 1);
        assert_eq!(records[0].properties.bb_kt, Some(0.5));

        let mut only_b = vec![rec("b")];
        assert!(matches!(
            merge_properties(&mut only_b, &table),
            Err(CorpusError::UnknownPropertiesRow(_))
        ));
    }

    fn corpus_with(values: &[(&str, Option<f64>)]) -> Corpus {
        let records = values
            .iter()
            .map(|(id, v)| {
                let mut r = rec(id);
                r.properties.powlaw_gamma = *v;
                r
            })
            .collect();
        join_corpus(records, vec![], None).unwrap().0
    }

    #[test]
    fn quantile_terciles_of_six() {
        let c = corpus_with(&[
            ("f", Some(6.0)),
            ("a", Some(1.0)),
            ("d", Some(4.0)),
            ("b", Some(2.0)),
            ("e", Some(5.0)),
            ("c", Some(3.0)),
        ]);
        let bins = assign_bins(&c, Property::PowlawGamma, 3, BinStrategy::Quantile).unwrap();
        let got: Vec<(&str, usize)> = bins.labels.iter().map(|(k, v)| (k.as_str(), *v)).collect();
        assert_eq!(
            got,
            vec![("a", 0), ("b", 0), ("c", 1), ("d", 1), ("e", 2), ("f", 2)]
        );
        assert_eq!(bins.edges, vec![1.0, 2.5, 4.5, 6.0]);
    }

    #[test]
    fn missing_values_are_excluded() {
        let c = corpus_with(&[
            ("a", Some(1.0)),
            ("b", None),
            ("c", Some(3.0)),
            ("d", Some(0.5)),
            ("e", None),
            ("f", Some(7.0)),
            ("g", Some(2.0)),
            ("h", Some(9.0)),
        ]);
        let bins = assign_bins(&c, Property::PowlawGamma, 2, BinStrategy::Quantile).unwrap();
        assert_eq!(bins.labels.len(), 6);
        assert!(!bins.labels.contains_key("b") && !bins.labels.contains_key("e"));
    }

    #[test]
    fn single_bin_labels_everything_zero() {
        let c = corpus_with(&[("a", Some(1.0)), ("b", Some(1.0)), ("c", Some(3.0))]);
        let bins = assign_bins(&c, Property::PowlawGamma, 1, BinStrategy::Quantile).unwrap();
        assert!(bins.labels.values().all(|&b| b == 0));
        assert_eq!(bins.labels.len(), 3);
    }

    #[test]
    fn binning_errors() {
        let c = corpus_with(&[("a", Some(1.0)), ("b", Some(1.0)), ("c", None)]);
        assert!(matches!(
            assign_bins(&c, Property::PowlawGamma, 3, BinStrategy::Quantile),
            Err(CorpusError::TooFewValues { present: 2, .. })
        ));
        assert!(matches!(
            assign_bins(&c, Property::PowlawGamma, 2, BinStrategy::Quantile),
            Err(CorpusError::IdenticalValues(_))
        ));
        assert!("gamma".parse::<Property>().is_err());
    }

    #[test]
    fn fixed_integer_bins() {
        let strategy = BinStrategy::integer_bins(0, 10, 3).unwrap();
        let values: Vec<(String, f64)> = (0..=10).map(|v| (format!("s{v:02}"), v as f64)).collect();
        let bins = bin_values("var_index_b", &values, 3, strategy).unwrap();
        let per_value: Vec<usize> = values.iter().map(|(id, _)| bins.labels[id]).collect();
        assert_eq!(per_value, vec![0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        assert!(bin_values(
            "x",
            &[("a".into(), 20.0)],
            1,
            BinStrategy::FixedEdges { edges: vec![0.0, 10.0] }
        )
        .is_err());
    }

    #[test]
    fn join_reports_matches() {
        use crate::llmclient::{MentionStatus, TemplateId};
        let summary = |id: &str| SummaryDoc {
            source_id: id.into(),
            text: "t".into(),
            mentioned: MentionStatus::Yes,
            prompt_id: TemplateId::Updated,
            model_id: "m".into(),
            content_digest: "d".into(),
        };
        let records = vec![rec("a"), rec("b"), rec("c")];
        let (corpus, stats) =
            join_corpus(records.clone(), vec![summary("a"), summary("c")], None).unwrap();
        assert_eq!(corpus.summaries.len(), 2);
        assert_eq!(stats.aligned, 2);
        assert_eq!(stats.records_without_summary, vec!["b"]);

        let err = join_corpus(records.clone(), vec![summary("zz")], None).unwrap_err();
        assert!(matches!(err, CorpusError::UnknownSummary(_)));

        let matrix = EmbeddingMatrix {
            row_ids: vec!["a".into(), "b".into(), "c".into()],
            data: ndarray::Array2::zeros((4, 3)),
            model_id: "m".into(),
        };
        let err = join_corpus(records, vec![], Some(matrix)).unwrap_err();
        assert!(matches!(err, CorpusError::Embedding(_)));
    }
}
