//! Classification head over frozen encoder frames.
//!
//! ```text
//! frames (T x D) -> linear D->H -> leaky ReLU -> dropout
//!                -> attention pooling over T -> linear H->H -> leaky ReLU -> dropout
//!                -> linear H->1 -> logit
//! ```
//!
//! Everything is computed in `f64` and differentiated by hand; see
//! [`backward`].

mod checkpoint;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC,
};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbeddingSequence;
use crate::Seed;

/// Width of both hidden layers in the reference configuration.
pub const DEFAULT_HIDDEN: usize = 768;

#[derive(Debug, Error)]
pub enum HeadError {
    #[error("head dimensions must be positive (d = {d}, h = {h})")]
    BadDims { d: usize, h: usize },
    #[error("input has {found} channels, head expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid hyperparameters: {0}")]
    BadHyper(String),
    #[error("checkpoint {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Trainable tensors. Also used as the container for gradients and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    /// `D x H`, applied as `x W1`.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub attn_v: Array1<f64>,
    /// `H x H`, applied as `p W2`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w_out: Array1<f64>,
    pub b_out: f64,
}

impl HeadParams {
    pub fn zeros(d: usize, h: usize) -> Self {
        HeadParams {
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            attn_v: Array1::zeros(h),
            w2: Array2::zeros((h, h)),
            b2: Array1::zeros(h),
            w_out: Array1::zeros(h),
            b_out: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let (d, h) = self.dims();
        HeadParams::zeros(d, h)
    }

    /// `(D, H)`.
    pub fn dims(&self) -> (usize, usize) {
        self.w1.dim()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Flat views in checkpoint order: w1, b1, attn_v, w2, b2, w_out, b_out.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.attn_v.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w_out.as_slice().expect("standard layout"),
            std::slice::from_ref(&self.b_out),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.attn_v.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w_out.as_slice_mut().expect("standard layout"),
            std::slice::from_mut(&mut self.b_out),
        ]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &HeadParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_same_shape(&self, other: &HeadParams) -> Result<(), HeadError> {
        if self.w1.dim() != other.w1.dim() || self.w2.dim() != other.w2.dim() {
            return Err(HeadError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadHyper {
    pub dropout_rate: f64,
    pub leaky_slope: f64,
    pub hidden: usize,
    pub adam: AdamConfig,
}

impl Default for HeadHyper {
    fn default() -> Self {
        HeadHyper { dropout_rate: 0.2, leaky_slope: 0.01, hidden: DEFAULT_HIDDEN, adam: AdamConfig::default() }
    }
}

impl HeadHyper {
    pub fn validate(&self) -> Result<(), HeadError> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(HeadError::BadHyper(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        if !(self.leaky_slope > 0.0) {
            return Err(HeadError::BadHyper("leaky_slope must be positive".into()));
        }
        if self.hidden == 0 {
            return Err(HeadError::BadHyper("hidden width must be positive".into()));
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.epsilon > 0.0) {
            return Err(HeadError::BadHyper("invalid Adam settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediates cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub z1: Array2<f64>,
    /// Inverted-dropout multipliers (0 or 1/(1-rate)); `None` in eval mode.
    pub mask1: Option<Array2<f64>>,
    /// Layer-1 output after activation and dropout (what gets pooled).
    pub h1: Array2<f64>,
    pub alpha: Array1<f64>,
    pub pooled: Array1<f64>,
    pub z2: Array1<f64>,
    pub mask2: Option<Array1<f64>>,
    pub h2: Array1<f64>,
    pub logit: f64,
}

/// Xavier-uniform weights, zero biases.
pub fn init_params(d: usize, h: usize, seed: Seed) -> Result<HeadParams, HeadError> {
    if d == 0 || h == 0 {
        return Err(HeadError::BadDims { d, h });
    }
    let mut rng = seed.rng();
    let mut p = HeadParams::zeros(d, h);
    let mut fill = |t: &mut [f64], fan_in: usize, fan_out: usize| {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        t.iter_mut().for_each(|w| *w = rng.random_range(-a..=a));
    };
    fill(p.w1.as_slice_mut().expect("standard layout"), d, h);
    fill(p.attn_v.as_slice_mut().expect("standard layout"), h, 1);
    fill(p.w2.as_slice_mut().expect("standard layout"), h, h);
    fill(p.w_out.as_slice_mut().expect("standard layout"), h, 1);
    Ok(p)
}

/// Scaled dot-product pooling against a single learned query.
///
/// Returns `(pooled, alpha)` where `alpha = softmax(frames . v / sqrt(H))`.
pub fn attention_pool(frames: ArrayView2<f64>, attn_v: ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
    let alpha = attention_weights(frames, attn_v);
    let pooled = alpha.dot(&frames);
    (pooled, alpha)
}

fn attention_weights(frames: ArrayView2<f64>, attn_v: ArrayView1<f64>) -> Array1<f64> {
    let scale = (attn_v.len() as f64).sqrt();
    softmax((frames.dot(&attn_v) / scale).view())
}

fn softmax(scores: ArrayView1<f64>) -> Array1<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.mapv(|s| (s - max).exp());
    let total = exp.sum();
    exp / total
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn dropout_mask<D: ndarray::Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    rate: f64,
    rng: &mut impl Rng,
) -> ndarray::Array<f64, D> {
    let keep = 1.0 / (1.0 - rate);
    ndarray::Array::from_shape_simple_fn(shape, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Runs the head on an embedding sequence.
pub fn forward(
    p: &HeadParams,
    hy: &HeadHyper,
    emb: &EmbeddingSequence,
    mode: Mode,
    seed: Seed,
) -> Result<(f64, ForwardTrace), HeadError> {
    forward_frames(p, hy, emb.frames.mapv(f64::from), mode, seed)
}

/// [`forward`] on a raw `T x D` matrix.
pub fn forward_frames(
    p: &HeadParams,
    hy: &HeadHyper,
    input: Array2<f64>,
    mode: Mode,
    seed: Seed,
) -> Result<(f64, ForwardTrace), HeadError> {
    let mut out = forward_batch(p, hy, vec![input], mode, &[seed])?;
    Ok(out.pop().expect("one item in, one item out"))
}

/// Runs the head on several inputs at once; `seeds[i]` drives item `i`'s
/// dropout. Equivalent to calling [`forward_frames`] per item, but the
/// `H x H` layer runs as one matrix product.
pub fn forward_batch(
    p: &HeadParams,
    hy: &HeadHyper,
    inputs: Vec<Array2<f64>>,
    mode: Mode,
    seeds: &[Seed],
) -> Result<Vec<(f64, ForwardTrace)>, HeadError> {
    let (d, h) = p.dims();
    if seeds.len() != inputs.len() {
        return Err(HeadError::ShapeMismatch(format!("{} inputs but {} seeds", inputs.len(), seeds.len())));
    }
    for input in &inputs {
        if input.ncols() != d {
            return Err(HeadError::DimMismatch { expected: d, found: input.ncols() });
        }
        if input.nrows() == 0 {
            return Err(HeadError::ShapeMismatch("input has no frames".into()));
        }
    }
    let slope = hy.leaky_slope;
    let dropout = mode == Mode::Train && hy.dropout_rate > 0.0;

    struct Stage1 {
        input: Array2<f64>,
        z1: Array2<f64>,
        mask1: Option<Array2<f64>>,
        h1: Array2<f64>,
        alpha: Array1<f64>,
        rng: rand_chacha::ChaCha8Rng,
    }
    let first: Vec<Stage1> = inputs
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|(input, seed)| {
            let mut rng = seed.rng();
            let z1 = input.dot(&p.w1) + &p.b1;
            let mut h1 = z1.mapv(|x| leaky(x, slope));
            let mask1 = dropout.then(|| dropout_mask(h1.raw_dim(), hy.dropout_rate, &mut rng));
            if let Some(m) = &mask1 {
                h1 *= m;
            }
            let alpha = attention_weights(h1.view(), p.attn_v.view());
            Stage1 { input, z1, mask1, h1, alpha, rng }
        })
        .collect();

    let mut pooled = Array2::zeros((first.len(), h));
    for (mut row, s) in pooled.rows_mut().into_iter().zip(&first) {
        row.assign(&s.alpha.dot(&s.h1));
    }
    let z2 = pooled.dot(&p.w2) + &p.b2;

    Ok(first
        .into_iter()
        .zip(pooled.rows().into_iter().zip(z2.rows()))
        .map(|(mut s, (pooled, z2))| {
            let mut h2 = z2.mapv(|x| leaky(x, slope));
            let mask2 = dropout.then(|| dropout_mask(h, hy.dropout_rate, &mut s.rng));
            if let Some(m) = &mask2 {
                h2 *= m;
            }
            let logit = h2.dot(&p.w_out) + p.b_out;
            let trace = ForwardTrace {
                input: s.input,
                z1: s.z1,
                mask1: s.mask1,
                h1: s.h1,
                alpha: s.alpha,
                pooled: pooled.to_owned(),
                z2: z2.to_owned(),
                mask2,
                h2,
                logit,
            };
            (logit, trace)
        })
        .collect())
}

/// Numerically stable binary cross-entropy on a logit.
///
/// Returns `(loss, d loss / d logit)`.
pub fn bce_loss(logit: f64, label: bool) -> (f64, f64) {
    let y = if label { 1.0 } else { 0.0 };
    // softplus(x) - y x, rearranged so no large terms cancel
    let loss = logit.max(0.0) - y * logit + (-logit.abs()).exp().ln_1p();
    (loss, sigmoid(logit) - y)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact gradients of the traced computation with respect to every parameter.
pub fn backward(p: &HeadParams, hy: &HeadHyper, trace: &ForwardTrace, dlogit: f64) -> Result<HeadParams, HeadError> {
    let mut g = p.zeros_like();
    backward_batch(p, hy, std::slice::from_ref(trace), &[dlogit], &mut g)?;
    Ok(g)
}

/// Adds `sum_i upstream[i] * d logit_i / d params` to `acc`.
///
/// Passing `dloss_i / dlogit_i / batch_size` as `upstream` yields the mean
/// batch gradient. Accumulation order is fixed, so the result does not
/// depend on thread scheduling.
pub fn backward_batch(
    p: &HeadParams,
    hy: &HeadHyper,
    traces: &[ForwardTrace],
    upstream: &[f64],
    acc: &mut HeadParams,
) -> Result<(), HeadError> {
    let (d, h) = p.dims();
    p.check_same_shape(acc)?;
    if traces.len() != upstream.len() {
        return Err(HeadError::ShapeMismatch(format!("{} traces but {} upstream gradients", traces.len(), upstream.len())));
    }
    for trace in traces {
        let t = trace.input.nrows();
        if trace.input.ncols() != d || trace.z1.dim() != (t, h) || trace.z2.len() != h {
            return Err(HeadError::ShapeMismatch(format!(
                "trace for input {:?} / hidden {} does not match params {:?}",
                trace.input.dim(),
                trace.z2.len(),
                (d, h)
            )));
        }
    }
    let slope = hy.leaky_slope;
    let b = traces.len();

    // output layer
    let mut dz2 = Array2::zeros((b, h));
    let mut pooled = Array2::zeros((b, h));
    for ((trace, &u), (mut dz, mut pr)) in
        traces.iter().zip(upstream).zip(dz2.rows_mut().into_iter().zip(pooled.rows_mut()))
    {
        acc.w_out.scaled_add(u, &trace.h2);
        acc.b_out += u;
        dz.assign(&(&p.w_out * u));
        if let Some(m) = &trace.mask2 {
            dz *= m;
        }
        Zip::from(&mut dz).and(&trace.z2).for_each(|g, &z| *g *= leaky_grad(z, slope));
        pr.assign(&trace.pooled);
    }

    // second linear layer
    general_mat_mul(1.0, &pooled.t(), &dz2, 1.0, &mut acc.w2);
    acc.b2 += &dz2.sum_axis(Axis(0));
    let dpooled = dz2.dot(&p.w2.t());

    // attention pooling: pooled = sum_t alpha_t h1_t, alpha = softmax(h1 v / sqrt(H))
    let root_h = (h as f64).sqrt();
    let rows: Vec<ArrayView1<f64>> = dpooled.rows().into_iter().collect();
    let per_item: Vec<(Array1<f64>, Array2<f64>)> = traces
        .par_iter()
        .zip(rows.par_iter())
        .map(|(trace, &dpooled)| {
            let dalpha = trace.h1.dot(&dpooled);
            let weighted = trace.alpha.dot(&dalpha);
            let dscore = &trace.alpha * &(dalpha - weighted);
            let dv = trace.h1.t().dot(&dscore) / root_h;
            let mut dh1 = outer(trace.alpha.view(), dpooled);
            general_mat_mul(
                1.0 / root_h,
                &dscore.view().insert_axis(Axis(1)),
                &p.attn_v.view().insert_axis(Axis(0)),
                1.0,
                &mut dh1,
            );
            if let Some(m) = &trace.mask1 {
                dh1 *= m;
            }
            Zip::from(&mut dh1).and(&trace.z1).for_each(|g, &z| *g *= leaky_grad(z, slope));
            (dv, dh1)
        })
        .collect();

    // first linear layer
    for (trace, (dv, dh1)) in traces.iter().zip(&per_item) {
        acc.attn_v += dv;
        general_mat_mul(1.0, &trace.input.t(), dh1, 1.0, &mut acc.w1);
        acc.b1 += &dh1.sum_axis(Axis(0));
    }
    Ok(())
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let a2 = a.insert_axis(Axis(1));
    let b2 = b.insert_axis(Axis(0));
    a2.dot(&b2)
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: HeadParams,
    pub v: HeadParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &HeadParams) -> Self {
        AdamState { m: like.zeros_like(), v: like.zeros_like(), step: 0 }
    }
}

/// One bias-corrected Adam update. Increments `state.step` before applying.
pub fn adam_step(p: &mut HeadParams, g: &HeadParams, state: &mut AdamState, hy: &HeadHyper) -> Result<(), HeadError> {
    p.check_same_shape(g)?;
    p.check_same_shape(&state.m)?;
    p.check_same_shape(&state.v)?;
    state.step += 1;
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = hy.adam;
    let step = i32::try_from(state.step).unwrap_or(i32::MAX);
    let c1 = 1.0 - beta1.powi(step);
    let c2 = 1.0 - beta2.powi(step);
    let params = p.tensors_mut();
    let grads = g.tensors();
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((pt, gt), mt), vt) in params.into_iter().zip(grads).zip(ms).zip(vs) {
        for (((w, &gr), m), v) in pt.iter_mut().zip(gt).zip(mt.iter_mut()).zip(vt.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * gr;
            *v = beta2 * *v + (1.0 - beta2) * gr * gr;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
