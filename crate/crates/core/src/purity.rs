//! k-nearest-neighbour purity of binned physical properties.
//!
//! Per-source purity is the fraction of a source's k nearest neighbours
//! (drawn only from sources that carry a bin label) that share its bin; the
//! reported purity is the unweighted mean over labelled sources.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{BinAssignment, BinStrategy};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PurityError {
    #[error("need more than k = {k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("k must be positive")]
    ZeroK,
    #[error("points contain non-finite values")]
    NonFinite,
    #[error("binned source `{0}` has no point")]
    MissingPoint(String),
    #[error("{rows} points but {ids} row ids")]
    RowCount { rows: usize, ids: usize },
    #[error("baseline purity must lie in (0, 1], got {0}")]
    InvalidBaseline(f64),
    #[error("purity must lie in [0, 1], got {0}")]
    InvalidPurity(f64),
}

pub type Result<T> = std::result::Result<T, PurityError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Embedding,
    Projection,
}

impl std::fmt::Display for Space {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Space::Embedding => "embedding",
            Space::Projection => "projection",
        })
    }
}

impl std::str::FromStr for Space {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "embedding" => Ok(Space::Embedding),
            "projection" => Ok(Space::Projection),
            other => Err(format!("unknown space `{other}` (expected embedding or projection)")),
        }
    }
}

/// Indices of the `k` nearest neighbours of every row (self excluded),
/// ascending by Euclidean distance with ties broken by ascending index.
pub fn knn_indices(points: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    knn_indices_with(points, k, false)
}

pub fn knn_indices_with(points: ArrayView2<f64>, k: usize, parallel: bool) -> Result<Vec<Vec<usize>>> {
    let n = points.nrows();
    if k == 0 {
        return Err(PurityError::ZeroK);
    }
    if n <= k {
        return Err(PurityError::TooFewPoints { n, k });
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(PurityError::NonFinite);
    }
    let query = |i: usize| -> Vec<usize> {
        let pi = points.row(i);
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d: f64 = pi
                    .iter()
                    .zip(points.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (d, j)
            })
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, by_dist);
        cand.truncate(k);
        cand.sort_unstable_by(by_dist);
        cand.into_iter().map(|(_, j)| j).collect()
    };
    Ok(if parallel {
        (0..n).into_par_iter().map(query).collect()
    } else {
        (0..n).map(query).collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub property_name: String,
    pub k: usize,
    pub space: Space,
    pub n_bins: usize,
    pub strategy: BinStrategy,
    pub n_used: usize,
    pub purity: f64,
    /// `(source_id, purity)` in label order (sorted by source id).
    pub per_source: Vec<(String, f64)>,
}

/// k-NN purity of `bins` over `points` (rows named by `row_ids`).
/// Unlabelled rows are dropped before neighbours are computed.
pub fn knn_purity(
    row_ids: &[String],
    points: ArrayView2<f64>,
    bins: &BinAssignment,
    k: usize,
    space: Space,
) -> Result<PurityReport> {
    if row_ids.len() != points.nrows() {
        return Err(PurityError::RowCount {
            rows: points.nrows(),
            ids: row_ids.len(),
        });
    }
    let index: BTreeMap<&str, usize> = row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut ids = Vec::with_capacity(bins.labels.len());
    let mut rows = Vec::with_capacity(bins.labels.len());
    let mut labels = Vec::with_capacity(bins.labels.len());
    for (id, &bin) in &bins.labels {
        let &r = index
            .get(id.as_str())
            .ok_or_else(|| PurityError::MissingPoint(id.clone()))?;
        ids.push(id.clone());
        rows.push(r);
        labels.push(bin);
    }
    let subset: Array2<f64> = points.select(Axis(0), &rows);
    let neighbours = knn_indices(subset.view(), k)?;
    let per_source: Vec<(String, f64)> = neighbours
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let agree = nb.iter().filter(|&&j| labels[j] == labels[i]).count();
            (ids[i].clone(), agree as f64 / k as f64)
        })
        .collect();
    let purity = per_source.iter().map(|(_, p)| p).sum::<f64>() / per_source.len() as f64;
    Ok(PurityReport {
        property_name: bins.property_name.clone(),
        k,
        space,
        n_bins: bins.n_bins,
        strategy: bins.strategy.clone(),
        n_used: per_source.len(),
        purity,
        per_source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub before: f64,
    pub after: f64,
    /// `100 * (after - before) / before`, unrounded.
    pub percent: f64,
}

impl Improvement {
    /// Percentage rounded to one decimal, as displayed in reports.
    pub fn display(&self) -> String {
        format!("{:.1}%", self.percent)
    }
}

pub fn improvement(before: f64, after: f64) -> Result<Improvement> {
    if !(before > 0.0 && before <= 1.0) {
        return Err(PurityError::InvalidBaseline(before));
    }
    if !(0.0..=1.0).contains(&after) {
        return Err(PurityError::InvalidPurity(after));
    }
    Ok(Improvement {
        before,
        after,
        percent: 100.0 * (after - before) / before,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub property_name: String,
    pub before: f64,
    pub after: f64,
    pub improvement_percent: f64,
    pub improvement_display: String,
}

/// Before/after purity per property, e.g. original vs. updated prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before_label: String,
    pub after_label: String,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// Pair reports by property name; properties missing on either side are
    /// skipped.
    pub fn build(
        before_label: &str,
        before: &[PurityReport],
        after_label: &str,
        after: &[PurityReport],
    ) -> Result<Self> {
        let after_by: BTreeMap<&str, &PurityReport> =
            after.iter().map(|r| (r.property_name.as_str(), r)).collect();
        let mut rows = Vec::new();
        for b in before {
            let Some(a) = after_by.get(b.property_name.as_str()) else {
                continue;
            };
            let imp = improvement(b.purity, a.purity)?;
            rows.push(ComparisonRow {
                property_name: b.property_name.clone(),
                before: b.purity,
                after: a.purity,
                improvement_percent: imp.percent,
                improvement_display: imp.display(),
            });
        }
        Ok(Self {
            before_label: before_label.to_string(),
            after_label: after_label.to_string(),
            rows,
        })
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "| Property | {} | {} | Improvement |",
            self.before_label, self.after_label
        );
        s.push_str("|---|---:|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {} | {:.4} | {:.4} | {} |",
                r.property_name, r.before, r.after, r.improvement_display
            );
        }
        s
    }
}
