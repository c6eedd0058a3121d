//! Exact t-SNE.
//!
//! Gaussian input affinities are calibrated per row to a target perplexity
//! by bisection on the precision, symmetrized into a joint distribution, and
//! matched by a Student-t (one degree of freedom) output kernel via gradient
//! descent on KL(P || Q) with early exaggeration, momentum and adaptive gains.
//! All pairwise work is O(n^2); there is no tree approximation.

use std::io::{self, BufRead, Write};

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::llmclient::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TsneError {
    #[error("t-SNE needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("perplexity {perplexity} is invalid for n = {n} (need 1 < perplexity < {max})")]
    InvalidPerplexity { perplexity: f64, n: usize, max: f64 },
    #[error("perplexity bisection did not converge for row {row} (duplicated points?)")]
    BisectionFailed { row: usize },
    #[error("non-finite gradient at iteration {iteration}")]
    NonFiniteGradient { iteration: usize },
    #[error("invalid t-SNE configuration: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite values")]
    NonFiniteInput,
}

pub type Result<T> = std::result::Result<T, TsneError>;

const PERPLEXITY_RTOL: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 200;
const MIN_GAIN: f64 = 0.01;
const INIT_STD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub output_dim: usize,
    pub n_iter: usize,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
    /// Scale every input row to unit length before computing distances.
    pub normalize_inputs: bool,
    /// Lower bound applied to joint affinities after symmetrization.
    pub affinity_floor: f64,
    /// Per-coordinate adaptive gains (delta-bar-delta).
    pub adaptive_gains: bool,
    /// Parallelize row work with rayon. Results match the single-threaded
    /// mode, which is the reference for bit reproducibility.
    pub parallel: bool,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            output_dim: 2,
            n_iter: 1000,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
            normalize_inputs: false,
            affinity_floor: 1e-12,
            adaptive_gains: true,
            parallel: false,
        }
    }
}

impl TsneConfig {
    /// Check the configuration against a dataset of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 4 {
            return Err(TsneError::TooFewPoints(n));
        }
        let max = (n as f64 - 1.0) / 3.0;
        if !(self.perplexity > 1.0 && self.perplexity < max) {
            return Err(TsneError::InvalidPerplexity {
                perplexity: self.perplexity,
                n,
                max,
            });
        }
        let bad = |what: &str| Err(TsneError::InvalidConfig(what.to_string()));
        if self.output_dim == 0 {
            return bad("output_dim must be positive");
        }
        if self.n_iter == 0 || self.early_exaggeration_iters == 0 || self.momentum_switch_iter == 0 {
            return bad("iteration counts must be positive");
        }
        if !(self.early_exaggeration_factor > 0.0) || !(self.learning_rate > 0.0) {
            return bad("exaggeration factor and learning rate must be positive");
        }
        if !(self.momentum_initial >= 0.0 && self.momentum_initial < 1.0)
            || !(self.momentum_final >= 0.0 && self.momentum_final < 1.0)
        {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.affinity_floor >= 0.0) {
            return bad("affinity_floor must be non-negative");
        }
        Ok(())
    }
}

pub fn squared_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let s: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            d[[i, j]] = s;
            d[[j, i]] = s;
        }
    }
    d
}

/// Gaussian conditionals for one row, calibrated so that the row's
/// perplexity `exp(H)` matches `perplexity` within relative 1e-5.
fn calibrate_row(dist: &[f64], row: usize, perplexity: f64) -> Result<Vec<f64>> {
    let target = perplexity.ln();
    let dmin = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != row)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = dist.iter().map(|&d| d - dmin).collect();
    let mean_shift = shifted
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != row)
        .map(|(_, &d)| d)
        .sum::<f64>()
        / (dist.len() - 1) as f64;

    let mut beta = if mean_shift > 0.0 { 1.0 / mean_shift } else { 1.0 };
    let mut lo = 0.0_f64;
    let mut hi = f64::INFINITY;
    let mut p = vec![0.0; dist.len()];
    for _ in 0..MAX_BISECTION_STEPS {
        let mut sum = 0.0;
        let mut weighted = 0.0;
        for (j, (&d, pj)) in shifted.iter().zip(p.iter_mut()).enumerate() {
            if j == row {
                *pj = 0.0;
                continue;
            }
            let w = (-beta * d).exp();
            *pj = w;
            sum += w;
            weighted += w * d;
        }
        let entropy = sum.ln() + beta * weighted / sum;
        if ((entropy.exp() - perplexity) / perplexity).abs() < PERPLEXITY_RTOL {
            p.iter_mut().for_each(|v| *v /= sum);
            return Ok(p);
        }
        if entropy > target {
            lo = beta;
            beta = if hi.is_finite() { 0.5 * (beta + hi) } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = 0.5 * (beta + lo);
        }
        if !beta.is_finite() {
            break;
        }
    }
    Err(TsneError::BisectionFailed { row })
}

/// Row-stochastic conditional affinities P(j|i) with zero diagonal.
///
/// Perplexity must satisfy `1 < perplexity < n - 1`; the tighter
/// `(n - 1) / 3` bound is enforced by [`run_tsne`].
pub fn conditional_affinities(x: ArrayView2<f64>, perplexity: f64) -> Result<Array2<f64>> {
    conditional_affinities_with(x, perplexity, false)
}

fn conditional_affinities_with(x: ArrayView2<f64>, perplexity: f64, parallel: bool) -> Result<Array2<f64>> {
    let n = x.nrows();
    if n < 4 {
        return Err(TsneError::TooFewPoints(n));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(TsneError::NonFiniteInput);
    }
    let max = n as f64 - 1.0;
    if !(perplexity > 1.0 && perplexity < max) {
        return Err(TsneError::InvalidPerplexity { perplexity, n, max });
    }
    let d = squared_distances(x);
    let rows: Vec<Result<Vec<f64>>> = if parallel {
        (0..n)
            .into_par_iter()
            .map(|i| calibrate_row(d.row(i).as_slice().expect("contiguous"), i, perplexity))
            .collect()
    } else {
        (0..n)
            .map(|i| calibrate_row(d.row(i).as_slice().expect("contiguous"), i, perplexity))
            .collect()
    };
    let mut p = Array2::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row?.into_iter().enumerate() {
            p[[i, j]] = v;
        }
    }
    Ok(p)
}

/// Joint affinities `(P + P^T) / 2n`, off-diagonal entries floored at
/// `floor` and renormalized to sum to one.
pub fn symmetrize(p: &Array2<f64>, floor: f64) -> Result<Array2<f64>> {
    let n = p.nrows();
    if n < 4 || p.ncols() != n {
        return Err(TsneError::TooFewPoints(n));
    }
    let mut out = Array2::zeros((n, n));
    let scale = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((p[[i, j]] + p[[j, i]]) * scale).max(floor);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    let total: f64 = out.sum();
    out.mapv_inplace(|v| v / total);
    Ok(out)
}

struct Evaluation {
    /// KL(P || Q) against the un-exaggerated P.
    kl: f64,
    grad: Array2<f64>,
}

/// Student-t kernel weights `1 / (1 + |y_i - y_j|^2)` for one row.
fn kernel_row(y: ArrayView2<f64>, i: usize) -> Vec<f64> {
    let yi = y.row(i);
    (0..y.nrows())
        .map(|j| {
            if j == i {
                0.0
            } else {
                let d2: f64 = yi.iter().zip(y.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                1.0 / (1.0 + d2)
            }
        })
        .collect()
}

fn evaluate(p: &Array2<f64>, y: ArrayView2<f64>, exaggeration: f64, parallel: bool) -> Evaluation {
    let n = y.nrows();
    let dim = y.ncols();
    let weights: Vec<Vec<f64>> = if parallel {
        (0..n).into_par_iter().map(|i| kernel_row(y, i)).collect()
    } else {
        (0..n).map(|i| kernel_row(y, i)).collect()
    };
    let z: f64 = weights.iter().map(|r| r.iter().sum::<f64>()).sum();
    let p_total: f64 = p.sum();
    let s_alpha = exaggeration * p_total;

    let row_work = |i: usize| -> (Vec<f64>, f64) {
        let mut g = vec![0.0; dim];
        let mut kl = 0.0;
        let yi = y.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let w = weights[i][j];
            let q = w / z;
            let pij = p[[i, j]];
            if pij > 0.0 {
                kl += pij * (pij / q).ln();
            }
            let coeff = 4.0 * (exaggeration * pij - s_alpha * q) * w;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += coeff * (yi[k] - y[[j, k]]);
            }
        }
        (g, kl)
    };
    let rows: Vec<(Vec<f64>, f64)> = if parallel {
        (0..n).into_par_iter().map(row_work).collect()
    } else {
        (0..n).map(row_work).collect()
    };
    let mut grad = Array2::zeros((n, dim));
    let mut kl = 0.0;
    for (i, (g, k)) in rows.into_iter().enumerate() {
        kl += k;
        for (c, v) in g.into_iter().enumerate() {
            grad[[i, c]] = v;
        }
    }
    Evaluation { kl, grad }
}

/// KL(P || Q(Y)) and its gradient with respect to `y`.
pub fn kl_gradient(p: &Array2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let e = evaluate(p, y, 1.0, false);
    (e.kl, e.grad)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub row_ids: Vec<String>,
    pub points: Array2<f64>,
    /// KL after each iteration's update, against the un-exaggerated P.
    pub kl_history: Vec<f64>,
    pub config: TsneConfig,
}

pub fn run_tsne(x: &EmbeddingMatrix, config: &TsneConfig) -> Result<ProjectionResult> {
    let n = x.rows();
    config.validate(n)?;
    let data = if config.normalize_inputs {
        let mut d = x.data.clone();
        for mut row in d.axis_iter_mut(Axis(0)) {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        d
    } else {
        x.data.clone()
    };
    let cond = conditional_affinities_with(data.view(), config.perplexity, config.parallel)?;
    let p = symmetrize(&cond, config.affinity_floor)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal");
    let dim = config.output_dim;
    let mut y = Array2::from_shape_simple_fn((n, dim), || normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((n, dim));
    let mut gains = Array2::<f64>::ones((n, dim));
    let mut kl_history = Vec::with_capacity(config.n_iter);

    for iter in 0..config.n_iter {
        let alpha = if iter < config.early_exaggeration_iters {
            config.early_exaggeration_factor
        } else {
            1.0
        };
        let eval = evaluate(&p, y.view(), alpha, config.parallel);
        // The KL at the current Y is the post-update KL of the previous step.
        if iter > 0 {
            kl_history.push(eval.kl);
        }
        if eval.grad.iter().any(|g| !g.is_finite()) {
            return Err(TsneError::NonFiniteGradient { iteration: iter });
        }
        let momentum = if iter < config.momentum_switch_iter {
            config.momentum_initial
        } else {
            config.momentum_final
        };
        for ((u, gain), &g) in update.iter_mut().zip(gains.iter_mut()).zip(eval.grad.iter()) {
            if config.adaptive_gains {
                *gain = if (g > 0.0) != (*u > 0.0) {
                    *gain + 0.2
                } else {
                    (*gain * 0.8).max(MIN_GAIN)
                };
            }
            *u = momentum * *u - config.learning_rate * *gain * g;
        }
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("n > 0");
        y -= &mean;
    }
    kl_history.push(evaluate(&p, y.view(), 1.0, config.parallel).kl);

    if y.iter().any(|v| !v.is_finite()) {
        return Err(TsneError::NonFiniteGradient {
            iteration: config.n_iter,
        });
    }
    Ok(ProjectionResult {
        row_ids: x.row_ids.clone(),
        points: y,
        kl_history,
        config: config.clone(),
    })
}

fn axis_names(dim: usize) -> Vec<String> {
    match dim {
        1 => vec!["x".into()],
        2 => vec!["x".into(), "y".into()],
        3 => vec!["x".into(), "y".into(), "z".into()],
        _ => (0..dim).map(|k| format!("d{k}")).collect(),
    }
}

/// JSON sidecar written next to the plot-data CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub config: TsneConfig,
    pub kl_history: Vec<f64>,
}

impl ProjectionResult {
    /// Plot data: header `row_id,x,y` (or `x,y,z`, `d0..` for other
    /// dimensions) and one row per point.
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["row_id".to_string()];
        header.extend(axis_names(self.points.ncols()));
        wr.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(self.points.outer_iter()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()
    }

    pub fn sidecar(&self) -> ProjectionSidecar {
        ProjectionSidecar {
            config: self.config.clone(),
            kl_history: self.kl_history.clone(),
        }
    }

    pub fn read_csv<R: BufRead>(r: R, sidecar: ProjectionSidecar) -> io::Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let dim = rd.headers()?.len().saturating_sub(1);
        let mut row_ids = Vec::new();
        let mut flat = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            row_ids.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                flat.push(v.parse::<f64>().map_err(io::Error::other)?);
            }
        }
        let points = Array2::from_shape_vec((row_ids.len(), dim), flat).map_err(io::Error::other)?;
        Ok(ProjectionResult {
            row_ids,
            points,
            kl_history: sidecar.kl_history,
            config: sidecar.config,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn square_corners_split_evenly_between_neighbours() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let p = conditional_affinities(x.view(), 2.0).unwrap();
        for i in 0..4 {
            let a = p[[i, (i + 1) % 4]];
            let b = p[[i, (i + 3) % 4]];
            assert!((a - b).abs() < 1e-12, "row {i}: {a} vs {b}");
            assert_eq!(p[[i, i]], 0.0);
            assert!((p.row(i).sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_points_fail_bisection() {
        let x = Array2::<f64>::ones((4, 3));
        assert_eq!(
            conditional_affinities(x.view(), 2.0).unwrap_err(),
            TsneError::BisectionFailed { row: 0 }
        );
    }

    #[test]
    fn too_few_points() {
        let x = array![[0.0, 0.0], [1.0, 0.0]];
        assert_eq!(conditional_affinities(x.view(), 1.5).unwrap_err(), TsneError::TooFewPoints(2));
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(symmetrize(&p, 1e-12).is_err());
    }

    #[test]
    fn config_validation_uses_n() {
        let cfg = TsneConfig::default();
        assert!(matches!(cfg.validate(60), Err(TsneError::InvalidPerplexity { .. })));
        assert!(cfg.validate(100).is_ok());
        let cfg = TsneConfig {
            n_iter: 0,
            ..TsneConfig::default()
        };
        assert!(matches!(cfg.validate(100), Err(TsneError::InvalidConfig(_))));
    }

    #[test]
    fn csv_roundtrip() {
        let res = ProjectionResult {
            row_ids: vec!["a".into(), "b,c".into()],
            points: array![[0.1, -2.0], [1e-20, 3.5]],
            kl_history: vec![1.0, 0.5],
            config: TsneConfig::default(),
        };
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("row_id,x,y\n"));
        let back = ProjectionResult::read_csv(&buf[..], res.sidecar()).unwrap();
        assert_eq!(back, res);
    }
}
