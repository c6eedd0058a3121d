//! Sparse autoencoder over embedding vectors.
//!
//! `a = ReLU(W_enc (x - b_dec) + b_enc)`, `x̂ = W_dec a + b_dec`, trained on
//! `mse + λ·l1` with Adam. Decoder columns are kept at unit norm: the
//! gradient component parallel to each column is removed before the step and
//! the column is renormalized after it. Features that stay silent for too
//! long are periodically resampled toward badly reconstructed inputs.

use std::io;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Dimension, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::llmclient::EmbeddingMatrix;

/// Activations at or below this are treated as silent.
pub const ACTIVE_THRESHOLD: f64 = 1e-8;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const RESAMPLE_SCALE: f64 = 0.2;

#[derive(Debug, thiserror::Error)]
pub enum SaeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("need at least {batch} rows for batch size {batch}, got {rows}")]
    TooFewRows { rows: usize, batch: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, SaeError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SaeTrainConfig {
    /// `d_hidden = expansion * d_in`.
    pub expansion: usize,
    pub l1_coefficient: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    /// Steps without any activation above [`ACTIVE_THRESHOLD`] after which a
    /// feature counts as dead.
    pub dead_threshold: usize,
    pub resample_interval: usize,
    pub log_interval: usize,
    pub seed: u64,
}

impl Default for SaeTrainConfig {
    fn default() -> Self {
        Self {
            expansion: 4,
            l1_coefficient: 1e-3,
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 10_000,
            dead_threshold: 1_000,
            resample_interval: 2_500,
            log_interval: 500,
            seed: 0,
        }
    }
}

impl SaeTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SaeError::InvalidConfig(m.into()));
        if self.expansion < 1 {
            return bad("expansion must be at least 1");
        }
        if !(self.l1_coefficient >= 0.0 && self.l1_coefficient.is_finite()) {
            return bad("l1_coefficient must be finite and non-negative");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.steps == 0 {
            return bad("batch_size and steps must be positive");
        }
        if self.dead_threshold == 0 || self.resample_interval == 0 || self.log_interval == 0 {
            return bad("dead_threshold, resample_interval and log_interval must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeModel {
    /// `d_hidden × d_in`.
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    /// `d_in × d_hidden`, unit-norm columns.
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
    pub config: SaeTrainConfig,
    pub steps_trained: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub mse: f64,
    pub l1: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaeGrads {
    pub w_enc: Array2<f64>,
    pub b_enc: Array1<f64>,
    pub w_dec: Array2<f64>,
    pub b_dec: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub step: usize,
    pub mse: f64,
    pub l1: f64,
    pub total: f64,
    /// Features active on at least one training row.
    pub active_features: usize,
    /// Features resampled at this step.
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub row_ids: Vec<String>,
    /// `n × d_hidden`, non-negative.
    pub data: Array2<f64>,
}

fn check_finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> Result<()> {
    if it.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SaeError::NonFiniteInput)
    }
}

impl SaeModel {
    /// Random unit decoder columns, encoder tied to the decoder transpose,
    /// zero biases.
    pub fn init(d_in: usize, d_hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w_dec = Array2::from_shape_simple_fn((d_in, d_hidden), || StandardNormal.sample(&mut rng));
        normalize_columns(&mut w_dec);
        Self {
            w_enc: w_dec.t().as_standard_layout().into_owned(),
            b_enc: Array1::zeros(d_hidden),
            w_dec,
            b_dec: Array1::zeros(d_in),
            config: SaeTrainConfig {
                seed,
                ..SaeTrainConfig::default()
            },
            steps_trained: 0,
        }
    }

    pub fn d_in(&self) -> usize {
        self.b_dec.len()
    }

    pub fn d_hidden(&self) -> usize {
        self.b_enc.len()
    }

    pub fn encode(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.d_in() {
            return Err(SaeError::DimensionMismatch {
                expected: self.d_in(),
                got: x.len(),
            });
        }
        let c = &x - &self.b_dec;
        let mut a = self.w_enc.dot(&c) + &self.b_enc;
        a.mapv_inplace(|v| v.max(0.0));
        Ok(a)
    }

    pub fn decode(&self, a: ArrayView1<f64>) -> Result<Array1<f64>> {
        if a.len() != self.d_hidden() {
            return Err(SaeError::DimensionMismatch {
                expected: self.d_hidden(),
                got: a.len(),
            });
        }
        Ok(self.w_dec.dot(&a) + &self.b_dec)
    }

    fn check_batch(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(SaeError::EmptyBatch);
        }
        if x.ncols() != self.d_in() {
            return Err(SaeError::DimensionMismatch {
                expected: self.d_in(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn loss(&self, batch: ArrayView2<f64>, lambda: f64) -> Result<LossParts> {
        self.check_batch(batch)?;
        Ok(self.forward(batch, lambda).parts)
    }

    /// Loss and its analytic gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: ArrayView2<f64>, lambda: f64) -> Result<(LossParts, SaeGrads)> {
        self.check_batch(batch)?;
        let fwd = self.forward(batch, lambda);
        let grads = self.backward(&fwd, lambda);
        Ok((fwd.parts, grads))
    }

    fn forward(&self, x: ArrayView2<f64>, lambda: f64) -> Forward {
        let (b, d) = x.dim();
        let c = &x - &self.b_dec;
        let pre = c.dot(&self.w_enc.t()) + &self.b_enc;
        let a = pre.mapv(|v| v.max(0.0));
        let err = a.dot(&self.w_dec.t()) + &self.b_dec - x;
        let mse = err.iter().map(|e| e * e).sum::<f64>() / (b * d) as f64;
        let l1 = a.sum() / b as f64;
        Forward {
            parts: LossParts {
                mse,
                l1,
                total: mse + lambda * l1,
            },
            c,
            pre,
            a,
            err,
        }
    }

    fn backward(&self, f: &Forward, lambda: f64) -> SaeGrads {
        let (b, d) = f.err.dim();
        let d_xhat = &f.err * (2.0 / (b * d) as f64);
        let w_dec = d_xhat.t().dot(&f.a);
        let mut d_pre = d_xhat.dot(&self.w_dec) + lambda / b as f64;
        Zip::from(&mut d_pre).and(&f.pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        let w_enc = d_pre.t().dot(&f.c);
        let b_enc = d_pre.sum_axis(Axis(0));
        let d_c = d_pre.dot(&self.w_enc);
        let b_dec = d_xhat.sum_axis(Axis(0)) - d_c.sum_axis(Axis(0));
        SaeGrads {
            w_enc,
            b_enc,
            w_dec,
            b_dec,
        }
    }

    /// Row-wise [`SaeModel::encode`]; rows are independent so the parallel
    /// result is identical to the sequential one.
    pub fn feature_activations(&self, embeddings: &EmbeddingMatrix) -> Result<ActivationMatrix> {
        let data = self.encode_rows(embeddings.data.view())?;
        Ok(ActivationMatrix {
            row_ids: embeddings.row_ids.clone(),
            data,
        })
    }

    pub fn encode_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.d_in() {
            return Err(SaeError::DimensionMismatch {
                expected: self.d_in(),
                got: x.ncols(),
            });
        }
        let rows: Vec<Array1<f64>> = (0..x.nrows())
            .into_par_iter()
            .map(|i| self.encode(x.row(i)))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((x.nrows(), self.d_hidden()));
        for (mut dst, src) in out.outer_iter_mut().zip(rows) {
            dst.assign(&src);
        }
        Ok(out)
    }

    /// Largest deviation of a decoder column norm from 1.
    pub fn max_decoder_norm_error(&self) -> f64 {
        self.w_dec
            .axis_iter(Axis(1))
            .map(|c| (c.dot(&c).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        [&self.w_enc, &self.w_dec].iter().all(|m| m.iter().all(|v| v.is_finite()))
            && [&self.b_enc, &self.b_dec].iter().all(|v| v.iter().all(|x| x.is_finite()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| SaeError::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| SaeError::Format(e.to_string()))
    }
}

struct Forward {
    parts: LossParts,
    c: Array2<f64>,
    pre: Array2<f64>,
    a: Array2<f64>,
    err: Array2<f64>,
}

fn normalize_columns(w: &mut Array2<f64>) {
    for mut col in w.axis_iter_mut(Axis(1)) {
        let n = col.dot(&col).sqrt();
        if n > 0.0 {
            col.mapv_inplace(|v| v / n);
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SaeFile {
    format: String,
    d_in: usize,
    d_hidden: usize,
    config: SaeTrainConfig,
    steps_trained: usize,
    /// Row-major `d_hidden × d_in`.
    w_enc: Vec<f64>,
    b_enc: Vec<f64>,
    /// Row-major `d_in × d_hidden`.
    w_dec: Vec<f64>,
    b_dec: Vec<f64>,
}

const FORMAT_TAG: &str = "astrolens-sae-v1";

impl Serialize for SaeModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SaeFile {
            format: FORMAT_TAG.into(),
            d_in: self.d_in(),
            d_hidden: self.d_hidden(),
            config: self.config.clone(),
            steps_trained: self.steps_trained,
            w_enc: self.w_enc.iter().copied().collect(),
            b_enc: self.b_enc.to_vec(),
            w_dec: self.w_dec.iter().copied().collect(),
            b_dec: self.b_dec.to_vec(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SaeModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let f = SaeFile::deserialize(d)?;
        if f.format != FORMAT_TAG {
            return Err(D::Error::custom(format!("unsupported model format `{}`", f.format)));
        }
        let shape = |v: Vec<f64>, r: usize, c: usize, name: &str| {
            Array2::from_shape_vec((r, c), v).map_err(|_| D::Error::custom(format!("{name} has the wrong size")))
        };
        let m = SaeModel {
            w_enc: shape(f.w_enc, f.d_hidden, f.d_in, "w_enc")?,
            w_dec: shape(f.w_dec, f.d_in, f.d_hidden, "w_dec")?,
            b_enc: Array1::from(f.b_enc),
            b_dec: Array1::from(f.b_dec),
            config: f.config,
            steps_trained: f.steps_trained,
        };
        if m.b_enc.len() != f.d_hidden || m.b_dec.len() != f.d_in {
            return Err(D::Error::custom("bias length does not match declared dimensions"));
        }
        if !m.is_finite() {
            return Err(D::Error::custom("model contains non-finite weights"));
        }
        Ok(m)
    }
}

struct Moments<D: Dimension> {
    m: ndarray::Array<f64, D>,
    v: ndarray::Array<f64, D>,
}

impl<D: Dimension> Moments<D> {
    fn zeros_like(a: &ndarray::Array<f64, D>) -> Self {
        Self {
            m: ndarray::Array::zeros(a.raw_dim()),
            v: ndarray::Array::zeros(a.raw_dim()),
        }
    }

    fn step(&mut self, param: &mut ndarray::Array<f64, D>, grad: &ndarray::Array<f64, D>, lr_t: f64) {
        Zip::from(param)
            .and(grad)
            .and(&mut self.m)
            .and(&mut self.v)
            .for_each(|p, &g, m, v| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + ADAM_EPS);
            });
    }
}

struct Optimizer {
    w_enc: Moments<ndarray::Ix2>,
    b_enc: Moments<ndarray::Ix1>,
    w_dec: Moments<ndarray::Ix2>,
    b_dec: Moments<ndarray::Ix1>,
    t: i32,
}

impl Optimizer {
    fn new(m: &SaeModel) -> Self {
        Self {
            w_enc: Moments::zeros_like(&m.w_enc),
            b_enc: Moments::zeros_like(&m.b_enc),
            w_dec: Moments::zeros_like(&m.w_dec),
            b_dec: Moments::zeros_like(&m.b_dec),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SaeModel, g: &SaeGrads, lr: f64) {
        self.t += 1;
        let lr_t = lr * (1.0 - ADAM_BETA2.powi(self.t)).sqrt() / (1.0 - ADAM_BETA1.powi(self.t));
        self.w_enc.step(&mut model.w_enc, &g.w_enc, lr_t);
        self.b_enc.step(&mut model.b_enc, &g.b_enc, lr_t);
        self.w_dec.step(&mut model.w_dec, &g.w_dec, lr_t);
        self.b_dec.step(&mut model.b_dec, &g.b_dec, lr_t);
    }

    fn reset_feature(&mut self, f: usize) {
        for m in [&mut self.w_enc.m, &mut self.w_enc.v] {
            m.row_mut(f).fill(0.0);
        }
        for m in [&mut self.w_dec.m, &mut self.w_dec.v] {
            m.column_mut(f).fill(0.0);
        }
        self.b_enc.m[f] = 0.0;
        self.b_enc.v[f] = 0.0;
    }
}

/// Remove from each decoder-column gradient its component along the column.
fn project_decoder_grad(w_dec: &Array2<f64>, g: &mut Array2<f64>) {
    for (w, mut gc) in w_dec.axis_iter(Axis(1)).zip(g.axis_iter_mut(Axis(1))) {
        let along = w.dot(&gc);
        gc.scaled_add(-along, &w);
    }
}

/// Per-row squared reconstruction error and per-feature activity over `x`.
fn full_pass(model: &SaeModel, x: ArrayView2<f64>, lambda: f64) -> (LossParts, Vec<f64>, Vec<bool>) {
    let f = model.forward(x, lambda);
    let row_err: Vec<f64> = f.err.outer_iter().map(|r| r.dot(&r)).collect();
    let active: Vec<bool> = f
        .a
        .axis_iter(Axis(1))
        .map(|c| c.iter().any(|&v| v > ACTIVE_THRESHOLD))
        .collect();
    (f.parts, row_err, active)
}

fn resample(model: &mut SaeModel, opt: &mut Optimizer, x: ArrayView2<f64>, dead: &[usize]) {
    let lambda = model.config.l1_coefficient;
    let (_, row_err, _) = full_pass(model, x, lambda);
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    order.sort_by(|&i, &j| row_err[j].total_cmp(&row_err[i]).then(i.cmp(&j)));

    let live_norms: Vec<f64> = (0..model.d_hidden())
        .filter(|f| !dead.contains(f))
        .map(|f| model.w_enc.row(f).dot(&model.w_enc.row(f)).sqrt())
        .collect();
    let live_norm = if live_norms.is_empty() {
        1.0
    } else {
        live_norms.iter().sum::<f64>() / live_norms.len() as f64
    };

    for (slot, &f) in dead.iter().enumerate() {
        let row = x.row(order[slot % order.len()]);
        let recon = model
            .decode(model.encode(row).expect("row has d_in columns").view())
            .expect("activation has d_hidden entries");
        let mut dir = &row - &recon;
        if dir.dot(&dir) < 1e-24 {
            dir = &row - &model.b_dec;
        }
        let n = dir.dot(&dir).sqrt();
        if n < 1e-12 {
            continue;
        }
        dir /= n;
        model.w_dec.column_mut(f).assign(&dir);
        model.w_enc.row_mut(f).assign(&(&dir * (RESAMPLE_SCALE * live_norm)));
        model.b_enc[f] = 0.0;
        opt.reset_feature(f);
    }
}

/// Everything the observer sees after each optimizer step.
pub struct StepInfo<'a> {
    pub step: usize,
    pub batch_loss: LossParts,
    pub model: &'a SaeModel,
}

pub fn train(data: &EmbeddingMatrix, config: &SaeTrainConfig) -> Result<(SaeModel, Vec<HistoryEntry>)> {
    train_array(data.data.view(), config, |_| {})
}

/// Train on the rows of `x`, calling `observer` after every step.
pub fn train_array(
    x: ArrayView2<f64>,
    config: &SaeTrainConfig,
    mut observer: impl FnMut(&StepInfo),
) -> Result<(SaeModel, Vec<HistoryEntry>)> {
    config.validate()?;
    let (n, d_in) = x.dim();
    if n < config.batch_size {
        return Err(SaeError::TooFewRows {
            rows: n,
            batch: config.batch_size,
        });
    }
    check_finite(x.iter())?;
    let lambda = config.l1_coefficient;
    let d_hidden = config.expansion * d_in;

    let mut model = SaeModel::init(d_in, d_hidden, config.seed);
    model.config = config.clone();
    model.b_dec = x.mean_axis(Axis(0)).expect("non-empty data");
    let mut opt = Optimizer::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5ae5_5ae5);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut silent_for = vec![0usize; d_hidden];
    let mut history = Vec::new();

    let log = |model: &SaeModel, step: usize, resampled: usize, history: &mut Vec<HistoryEntry>| -> Result<()> {
        let (parts, _, active) = full_pass(model, x, lambda);
        if !parts.total.is_finite() {
            return Err(SaeError::Diverged { step });
        }
        history.push(HistoryEntry {
            step,
            mse: parts.mse,
            l1: parts.l1,
            total: parts.total,
            active_features: active.iter().filter(|&&a| a).count(),
            resampled,
        });
        Ok(())
    };
    log(&model, 0, 0, &mut history)?;

    let mut batch = Array2::zeros((config.batch_size, d_in));
    for step in 1..=config.steps {
        for mut dst in batch.outer_iter_mut() {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            dst.assign(&x.row(order[cursor]));
            cursor += 1;
        }
        let fwd = model.forward(batch.view(), lambda);
        if !fwd.parts.total.is_finite() {
            return Err(SaeError::Diverged { step });
        }
        for (f, col) in fwd.a.axis_iter(Axis(1)).enumerate() {
            if col.iter().any(|&v| v > ACTIVE_THRESHOLD) {
                silent_for[f] = 0;
            } else {
                silent_for[f] += 1;
            }
        }
        let mut grads = model.backward(&fwd, lambda);
        project_decoder_grad(&model.w_dec, &mut grads.w_dec);
        opt.step(&mut model, &grads, config.learning_rate);
        normalize_columns(&mut model.w_dec);
        if !model.is_finite() {
            return Err(SaeError::Diverged { step });
        }

        let mut resampled = 0;
        if step % config.resample_interval == 0 && step < config.steps {
            let dead: Vec<usize> = (0..d_hidden)
                .filter(|&f| silent_for[f] >= config.dead_threshold)
                .collect();
            if !dead.is_empty() {
                resample(&mut model, &mut opt, x, &dead);
                for &f in &dead {
                    silent_for[f] = 0;
                }
                resampled = dead.len();
            }
        }
        model.steps_trained = step;
        observer(&StepInfo {
            step,
            batch_loss: fwd.parts,
            model: &model,
        });
        if step % config.log_interval == 0 || step == config.steps || resampled > 0 {
            log(&model, step, resampled, &mut history)?;
        }
    }
    Ok((model, history))
}

impl ActivationMatrix {
    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    /// CSV with header `row_id,f0,f1,...`.
    pub fn write_csv<W: io::Write>(&self, w: W) -> io::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["row_id".to_string()];
        header.extend((0..self.n_features()).map(|f| format!("f{f}")));
        wr.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(self.data.outer_iter()) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            wr.write_record(&rec)?;
        }
        wr.flush()
    }

    pub fn read_csv<R: io::Read>(r: R) -> io::Result<Self> {
        let bad = |m: String| io::Error::new(io::ErrorKind::InvalidData, m);
        let mut rd = csv::Reader::from_reader(r);
        let width = rd.headers()?.len().saturating_sub(1);
        let mut row_ids = Vec::new();
        let mut values = Vec::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != width + 1 {
                return Err(bad(format!("row {} has {} fields", row_ids.len() + 1, rec.len())));
            }
            row_ids.push(rec[0].to_string());
            for v in rec.iter().skip(1) {
                let x: f64 = v.parse().map_err(|_| bad(format!("bad activation `{v}`")))?;
                if !(x.is_finite() && x >= 0.0) {
                    return Err(bad(format!("activation `{v}` is not a finite non-negative number")));
                }
                values.push(x);
            }
        }
        let data = Array2::from_shape_vec((row_ids.len(), width), values).map_err(|e| bad(e.to_string()))?;
        Ok(Self { row_ids, data })
    }
}
