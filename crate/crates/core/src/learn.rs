//! A small convolutional classifier trained from scratch.
//!
//! Layout: 64x64 grey input, two `conv 5x5 (pad 2) -> ReLU -> max-pool 2x2`
//! stages with 8 and 16 channels, a 128-unit hidden layer and a two-way
//! softmax. Class 0 is "stable". All arithmetic is `f64` and every reduction
//! runs in a fixed order, so training is bit-reproducible.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::stability::StabilityLabel;

pub const INPUT_SIDE: usize = 64;
const K: usize = 5;
const PAD: isize = 2;
const C1: usize = 8;
const C2: usize = 16;
const S1: usize = INPUT_SIDE / 2;
const S2: usize = INPUT_SIDE / 4;
const FLAT: usize = C2 * S2 * S2;
const HIDDEN: usize = 128;
const CLASSES: usize = 2;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training diverged in epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("probability {0} is outside [0, 1]")]
    OutOfRange(f64),
    #[error("invalid training configuration")]
    InvalidConfig,
}

/// Network weights. Convolution kernels are stored `[out][in][ky][kx]`,
/// dense weights `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub fc1_w: Vec<f64>,
    pub fc1_b: Vec<f64>,
    pub fc2_w: Vec<f64>,
    pub fc2_b: Vec<f64>,
}

/// Names and shapes of the parameter blocks, in storage order.
pub const LAYOUT: [(&str, &[usize]); 8] = [
    ("conv1.weight", &[C1, 1, K, K]),
    ("conv1.bias", &[C1]),
    ("conv2.weight", &[C2, C1, K, K]),
    ("conv2.bias", &[C2]),
    ("fc1.weight", &[HIDDEN, FLAT]),
    ("fc1.bias", &[HIDDEN]),
    ("fc2.weight", &[CLASSES, HIDDEN]),
    ("fc2.bias", &[CLASSES]),
];

impl ModelParams {
    pub fn zeros() -> Self {
        let len = |i: usize| LAYOUT[i].1.iter().product::<usize>();
        ModelParams {
            conv1_w: vec![0.0; len(0)],
            conv1_b: vec![0.0; len(1)],
            conv2_w: vec![0.0; len(2)],
            conv2_b: vec![0.0; len(3)],
            fc1_w: vec![0.0; len(4)],
            fc1_b: vec![0.0; len(5)],
            fc2_w: vec![0.0; len(6)],
            fc2_b: vec![0.0; len(7)],
        }
    }

    /// He initialisation: weights `N(0, 2 / fan_in)`, biases zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros();
        for (w, fan_in) in [
            (&mut p.conv1_w, K * K),
            (&mut p.conv2_w, C1 * K * K),
            (&mut p.fc1_w, FLAT),
            (&mut p.fc2_w, HIDDEN),
        ] {
            let normal = Normal::new(0.0, libm::sqrt(2.0 / fan_in as f64)).expect("positive std");
            for v in w.iter_mut() {
                *v = normal.sample(&mut rng);
            }
        }
        p
    }

    /// Parameter blocks in [`LAYOUT`] order.
    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.fc1_w,
            &self.fc1_b,
            &self.fc2_w,
            &self.fc2_b,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.fc1_w,
            &mut self.fc1_b,
            &mut self.fc2_w,
            &mut self.fc2_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    /// Check that every block has its [`LAYOUT`] length.
    pub fn check_shapes(&self) -> Result<(), LearnError> {
        for (block, (_, shape)) in self.blocks().iter().zip(LAYOUT) {
            let expected = shape.iter().product();
            if block.len() != expected {
                return Err(LearnError::ShapeMismatch {
                    expected,
                    got: block.len(),
                });
            }
        }
        Ok(())
    }

    fn axpy(&mut self, a: f64, other: &ModelParams) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += a * s;
            }
        }
    }

    fn scale(&mut self, a: f64) {
        for dst in self.blocks_mut() {
            for d in dst.iter_mut() {
                *d *= a;
            }
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Clone, Debug)]
pub struct Activations {
    col1: Vec<f64>,
    a1: Vec<f64>,
    col2: Vec<f64>,
    p1_arg: Vec<u32>,
    a2: Vec<f64>,
    p2: Vec<f64>,
    p2_arg: Vec<u32>,
    h: Vec<f64>,
    /// Softmax output; index 0 is "stable".
    pub probs: [f64; 2],
}

impl Activations {
    pub fn p_stable(&self) -> f64 {
        self.probs[0]
    }

    /// True when both passes took the same piecewise-linear branch: equal
    /// ReLU masks and equal max-pool winners. Between two such points the
    /// loss is smooth, which is what finite-difference checks rely on.
    pub fn same_pattern(&self, other: &Activations) -> bool {
        let mask = |v: &[f64], w: &[f64]| v.iter().zip(w).all(|(a, b)| (*a > 0.0) == (*b > 0.0));
        mask(&self.a1, &other.a1)
            && mask(&self.a2, &other.a2)
            && mask(&self.h, &other.h)
            && self.p1_arg == other.p1_arg
            && self.p2_arg == other.p2_arg
    }
}

fn class_index(label: StabilityLabel) -> usize {
    match label {
        StabilityLabel::Stable => 0,
        StabilityLabel::Unstable => 1,
    }
}

/// Dot product with four interleaved accumulators (fixed summation order).
#[inline(always)]
fn dot_generic(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

#[inline(always)]
fn axpy_generic(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

// Wider vector units only change speed: Rust never contracts `a * b + c`
// into a fused multiply-add, so both paths give bit-identical results.
#[cfg(all(feature = "std", target_arch = "x86_64"))]
mod wide {
    #[target_feature(enable = "avx2")]
    pub unsafe fn dot(a: &[f64], b: &[f64]) -> f64 {
        super::dot_generic(a, b)
    }

    #[target_feature(enable = "avx2")]
    pub unsafe fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
        super::axpy_generic(a, x, y)
    }

    pub fn available() -> bool {
        std::is_x86_feature_detected!("avx2")
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    if wide::available() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::dot(a, b) };
    }
    dot_generic(a, b)
}

#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    #[cfg(all(feature = "std", target_arch = "x86_64"))]
    if wide::available() {
        // SAFETY: the CPU supports AVX2.
        return unsafe { wide::axpy(a, x, y) };
    }
    axpy_generic(a, x, y)
}

/// Valid output range `[lo, hi)` for a kernel offset `d` on a row of length `n`.
#[inline]
fn span(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi)
}

/// Unfold `cin` planes of side `n` into a `(cin * K * K) x (n * n)` matrix
/// whose row `(i, ky, kx)` holds the input shifted by the kernel offset
/// (zero outside the image).
fn im2col(input: &[f64], cin: usize, n: usize) -> Vec<f64> {
    let plane = n * n;
    let mut col = vec![0.0; cin * K * K * plane];
    for i in 0..cin {
        let src = &input[i * plane..(i + 1) * plane];
        for ky in 0..K {
            let dy = ky as isize - PAD;
            let (y0, y1) = span(dy, n);
            for kx in 0..K {
                let dx = kx as isize - PAD;
                let (x0, x1) = span(dx, n);
                let row = ((i * K + ky) * K + kx) * plane;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    col[row + y * n + x0..row + y * n + x1]
                        .copy_from_slice(&src[sy * n + s0..sy * n + s0 + (x1 - x0)]);
                }
            }
        }
    }
    col
}

/// Inverse of [`im2col`]: add every unfolded entry back to its source pixel.
fn col2im(col: &[f64], cin: usize, n: usize) -> Vec<f64> {
    let plane = n * n;
    let mut out = vec![0.0; cin * plane];
    for i in 0..cin {
        let dst = &mut out[i * plane..(i + 1) * plane];
        for ky in 0..K {
            let dy = ky as isize - PAD;
            let (y0, y1) = span(dy, n);
            for kx in 0..K {
                let dx = kx as isize - PAD;
                let (x0, x1) = span(dx, n);
                let row = ((i * K + ky) * K + kx) * plane;
                for y in y0..y1 {
                    let sy = (y as isize + dy) as usize;
                    let s0 = (x0 as isize + dx) as usize;
                    axpy(
                        1.0,
                        &col[row + y * n + x0..row + y * n + x1],
                        &mut dst[sy * n + s0..sy * n + s0 + (x1 - x0)],
                    );
                }
            }
        }
    }
    out
}

/// Positions processed together so that the output tile stays in L1.
const TILE: usize = 128;

/// Same-size 5x5 convolution (cross-correlation) with zero padding, given
/// the unfolded input.
fn conv_forward(col: &[f64], w: &[f64], b: &[f64], cout: usize, plane: usize) -> Vec<f64> {
    let rows = w.len() / cout;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        out[o * plane..(o + 1) * plane]
            .iter_mut()
            .for_each(|v| *v = b[o]);
    }
    for t0 in (0..plane).step_by(TILE) {
        let t1 = (t0 + TILE).min(plane);
        for r in 0..rows {
            let src = &col[r * plane + t0..r * plane + t1];
            for o in 0..cout {
                axpy(w[o * rows + r], src, &mut out[o * plane + t0..o * plane + t1]);
            }
        }
    }
    out
}

/// Weight, bias and (optionally) unfolded-input gradients of a convolution.
#[allow(clippy::too_many_arguments)]
fn conv_backward(
    col: &[f64],
    w: &[f64],
    dz: &[f64],
    cout: usize,
    plane: usize,
    dw: &mut [f64],
    db: &mut [f64],
    mut dcol: Option<&mut [f64]>,
) {
    let rows = w.len() / cout;
    let live: Vec<bool> = (0..cout)
        .map(|o| dz[o * plane..(o + 1) * plane].iter().any(|&v| v != 0.0))
        .collect();
    for o in 0..cout {
        if live[o] {
            db[o] += dz[o * plane..(o + 1) * plane].iter().sum::<f64>();
        }
    }
    for t0 in (0..plane).step_by(TILE) {
        let t1 = (t0 + TILE).min(plane);
        for r in 0..rows {
            let src = &col[r * plane + t0..r * plane + t1];
            for o in 0..cout {
                if live[o] {
                    dw[o * rows + r] += dot(&dz[o * plane + t0..o * plane + t1], src);
                }
            }
            if let Some(dc) = dcol.as_deref_mut() {
                let dst = &mut dc[r * plane + t0..r * plane + t1];
                for o in 0..cout {
                    if live[o] {
                        axpy(w[o * rows + r], &dz[o * plane + t0..o * plane + t1], dst);
                    }
                }
            }
        }
    }
}

/// 2x2 max-pool over `c` planes of side `n`; ties go to the first element in
/// row-major order. Returns values and the flat argmax index into `input`.
fn max_pool(input: &[f64], c: usize, n: usize) -> (Vec<f64>, Vec<u32>) {
    let m = n / 2;
    let mut out = Vec::with_capacity(c * m * m);
    let mut arg = Vec::with_capacity(c * m * m);
    for ch in 0..c {
        let base = ch * n * n;
        for y in 0..m {
            for x in 0..m {
                let mut best = base + 2 * y * n + 2 * x;
                for (oy, ox) in [(0, 1), (1, 0), (1, 1)] {
                    let k = base + (2 * y + oy) * n + 2 * x + ox;
                    if input[k] > input[best] {
                        best = k;
                    }
                }
                out.push(input[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}

fn relu_in_place(v: &mut [f64]) {
    for x in v.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Numerically stable two-way softmax.
pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let e0 = libm::exp(z[0] - m);
    let e1 = libm::exp(z[1] - m);
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn forward(params: &ModelParams, input: &[f32]) -> Result<Activations, LearnError> {
    let x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    forward_f64(params, x)
}

fn forward_f64(params: &ModelParams, input: Vec<f64>) -> Result<Activations, LearnError> {
    if input.len() != INPUT_SIDE * INPUT_SIDE {
        return Err(LearnError::ShapeMismatch {
            expected: INPUT_SIDE * INPUT_SIDE,
            got: input.len(),
        });
    }
    params.check_shapes()?;
    let col1 = im2col(&input, 1, INPUT_SIDE);
    let mut a1 = conv_forward(
        &col1,
        &params.conv1_w,
        &params.conv1_b,
        C1,
        INPUT_SIDE * INPUT_SIDE,
    );
    relu_in_place(&mut a1);
    let (p1, p1_arg) = max_pool(&a1, C1, INPUT_SIDE);
    let col2 = im2col(&p1, C1, S1);
    let mut a2 = conv_forward(&col2, &params.conv2_w, &params.conv2_b, C2, S1 * S1);
    relu_in_place(&mut a2);
    let (p2, p2_arg) = max_pool(&a2, C2, S1);
    let mut h: Vec<f64> = (0..HIDDEN)
        .map(|j| params.fc1_b[j] + dot(&params.fc1_w[j * FLAT..(j + 1) * FLAT], &p2))
        .collect();
    relu_in_place(&mut h);
    let logits =
        [0, 1].map(|k| params.fc2_b[k] + dot(&params.fc2_w[k * HIDDEN..(k + 1) * HIDDEN], &h));
    Ok(Activations {
        col1,
        a1,
        col2,
        p1_arg,
        a2,
        p2,
        p2_arg,
        h,
        probs: softmax2(logits),
    })
}

/// Cross-entropy of one sample.
fn sample_loss(act: &Activations, label: StabilityLabel) -> f64 {
    -libm::log(act.probs[class_index(label)].max(f64::MIN_POSITIVE))
}

/// Add `weight * d(loss)/d(params)` for one sample into `grads`.
fn accumulate(
    params: &ModelParams,
    act: &Activations,
    label: StabilityLabel,
    weight: f64,
    grads: &mut ModelParams,
) {
    let mut dlogit = act.probs;
    dlogit[class_index(label)] -= 1.0;
    let dlogit = dlogit.map(|v| v * weight);

    let mut dh = vec![0.0; HIDDEN];
    #[allow(clippy::needless_range_loop)]
    for k in 0..CLASSES {
        grads.fc2_b[k] += dlogit[k];
        axpy(
            dlogit[k],
            &act.h,
            &mut grads.fc2_w[k * HIDDEN..(k + 1) * HIDDEN],
        );
        axpy(
            dlogit[k],
            &params.fc2_w[k * HIDDEN..(k + 1) * HIDDEN],
            &mut dh,
        );
    }
    let mut dp2 = vec![0.0; FLAT];
    #[allow(clippy::needless_range_loop)]
    for j in 0..HIDDEN {
        if act.h[j] <= 0.0 || dh[j] == 0.0 {
            continue;
        }
        grads.fc1_b[j] += dh[j];
        axpy(dh[j], &act.p2, &mut grads.fc1_w[j * FLAT..(j + 1) * FLAT]);
        axpy(dh[j], &params.fc1_w[j * FLAT..(j + 1) * FLAT], &mut dp2);
    }

    let mut dz2 = vec![0.0; C2 * S1 * S1];
    for (g, &k) in dp2.iter().zip(&act.p2_arg) {
        if act.a2[k as usize] > 0.0 {
            dz2[k as usize] += g;
        }
    }
    let mut dcol2 = vec![0.0; act.col2.len()];
    conv_backward(
        &act.col2,
        &params.conv2_w,
        &dz2,
        C2,
        S1 * S1,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut dcol2),
    );
    let dp1 = col2im(&dcol2, C1, S1);

    let mut dz1 = vec![0.0; C1 * INPUT_SIDE * INPUT_SIDE];
    for (g, &k) in dp1.iter().zip(&act.p1_arg) {
        if act.a1[k as usize] > 0.0 {
            dz1[k as usize] += g;
        }
    }
    conv_backward(
        &act.col1,
        &params.conv1_w,
        &dz1,
        C1,
        INPUT_SIDE * INPUT_SIDE,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        None,
    );
}

/// Mean cross-entropy over `batch` and its exact gradient.
pub fn backward(
    params: &ModelParams,
    batch: &[(&[f32], StabilityLabel)],
) -> Result<(ModelParams, f64), LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    let mut grads = ModelParams::zeros();
    let weight = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for &(x, label) in batch {
        let act = forward(params, x)?;
        loss += sample_loss(&act, label);
        accumulate(params, &act, label, weight, &mut grads);
    }
    Ok((grads, loss * weight))
}

/// Mean cross-entropy over `batch`.
pub fn batch_loss(
    params: &ModelParams,
    batch: &[(&[f32], StabilityLabel)],
) -> Result<f64, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    let mut loss = 0.0;
    for &(x, label) in batch {
        loss += sample_loss(&forward(params, x)?, label);
    }
    Ok(loss / batch.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.momentum)
            && self.batch_size >= 1
        {
            Ok(())
        } else {
            Err(LearnError::InvalidConfig)
        }
    }
}

/// One training example. `key` fixes the canonical order of the training
/// set, so the caller's ordering never matters.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub key: String,
    pub input: Vec<f32>,
    pub label: StabilityLabel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean training loss over the epoch's minibatches.
    pub loss: f64,
    /// Fraction of training samples classified correctly during the epoch.
    pub train_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub curve: Vec<EpochStats>,
}

/// Minibatch SGD with momentum (`v = mu v + g; w -= lr v`).
pub fn train(samples: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, LearnError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(LearnError::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].key.cmp(&samples[b].key).then(a.cmp(&b)));

    let mut params = ModelParams::init(cfg.seed);
    let mut velocity = ModelParams::zeros();
    // Separate stream so initialisation and shuffling do not interact.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546_464c_4521);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = ModelParams::zeros();
            let weight = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let s = &samples[i];
                let act = forward(&params, &s.input)?;
                loss_sum += sample_loss(&act, s.label);
                if label_of(act.p_stable()) == s.label {
                    correct += 1;
                }
                accumulate(&params, &act, s.label, weight, &mut grads);
            }
            velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &grads);
            params.axpy(-cfg.learning_rate, &velocity);
        }
        let loss = loss_sum / samples.len() as f64;
        if !loss.is_finite() || !params.is_finite() {
            return Err(LearnError::Diverged { epoch, loss });
        }
        curve.push(EpochStats {
            epoch,
            loss,
            train_acc: correct as f64 / samples.len() as f64,
        });
    }
    Ok(TrainOutcome { params, curve })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub label: StabilityLabel,
    /// Probability of the predicted class.
    pub confidence: f64,
    pub p_stable: f64,
}

/// A tie at exactly one half counts as unstable.
fn label_of(p_stable: f64) -> StabilityLabel {
    if p_stable > 0.5 {
        StabilityLabel::Stable
    } else {
        StabilityLabel::Unstable
    }
}

pub fn prediction_from_p(p_stable: f64) -> Prediction {
    Prediction {
        label: label_of(p_stable),
        confidence: p_stable.max(1.0 - p_stable),
        p_stable,
    }
}

pub fn predict(params: &ModelParams, input: &[f32]) -> Result<Prediction, LearnError> {
    Ok(prediction_from_p(forward(params, input)?.p_stable()))
}

/// Map `p_stable` to a 1..=5 confidence bin (1 = surely unstable).
pub fn quantize_confidence(p_stable: f64) -> Result<u8, LearnError> {
    if !(0.0..=1.0).contains(&p_stable) {
        return Err(LearnError::OutOfRange(p_stable));
    }
    Ok((1 + libm::floor(5.0 * p_stable) as u8).min(5))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..INPUT_SIDE * INPUT_SIDE)
            .map(|_| rand::Rng::random::<f32>(&mut rng))
            .collect()
    }

    #[test]
    fn zero_model_is_undecided() {
        let act = forward(&ModelParams::zeros(), &random_input(1)).unwrap();
        assert_eq!(act.probs, [0.5, 0.5]);
        assert_eq!(
            predict(&ModelParams::zeros(), &random_input(1))
                .unwrap()
                .label,
            StabilityLabel::Unstable
        );
    }

    #[test]
    fn biased_output_layer() {
        let mut p = ModelParams::zeros();
        p.fc2_b = vec![10.0, 0.0];
        let act = forward(&p, &random_input(2)).unwrap();
        let e = libm::exp(10.0);
        assert!((act.p_stable() - e / (e + 1.0)).abs() < 1e-15);
        assert!((act.p_stable() - 0.9999546).abs() < 1e-7);
    }

    #[test]
    fn probabilities_are_normalised() {
        for seed in 0..5 {
            let act = forward(&ModelParams::init(seed), &random_input(seed)).unwrap();
            assert!(act.p_stable() > 0.0 && act.p_stable() < 1.0);
            assert!((act.probs[0] + act.probs[1] - 1.0).abs() <= 1e-12);
        }
        let extreme = softmax2([800.0, -800.0]);
        assert!((extreme[0] + extreme[1] - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn wrong_input_size() {
        assert_eq!(
            forward(&ModelParams::zeros(), &[0.0; 10]).unwrap_err(),
            LearnError::ShapeMismatch {
                expected: 4096,
                got: 10
            }
        );
    }

    #[test]
    fn prediction_rules() {
        assert_eq!(prediction_from_p(0.5).label, StabilityLabel::Unstable);
        let p = prediction_from_p(0.9);
        assert_eq!((p.label, p.confidence), (StabilityLabel::Stable, 0.9));
        let p = prediction_from_p(0.2);
        assert_eq!((p.label, p.confidence), (StabilityLabel::Unstable, 0.8));
    }

    #[test]
    fn confidence_bins() {
        assert_eq!(quantize_confidence(0.0), Ok(1));
        assert_eq!(quantize_confidence(0.5), Ok(3));
        assert_eq!(quantize_confidence(0.99), Ok(5));
        assert_eq!(quantize_confidence(1.0), Ok(5));
        assert_eq!(quantize_confidence(1.5), Err(LearnError::OutOfRange(1.5)));
        assert!(quantize_confidence(f64::NAN).is_err());
    }

    #[test]
    fn duplicated_batch_has_same_gradient() {
        let p = ModelParams::init(3);
        let (x, y) = (random_input(4), random_input(5));
        let once = [
            (&x[..], StabilityLabel::Stable),
            (&y[..], StabilityLabel::Unstable),
        ];
        let twice = [once[0], once[1], once[0], once[1]];
        let (g1, l1) = backward(&p, &once).unwrap();
        let (g2, l2) = backward(&p, &twice).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.blocks().iter().zip(g2.blocks()) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{u} {v}");
            }
        }
    }

    #[test]
    fn confident_correct_prediction_has_tiny_gradient() {
        let mut p = ModelParams::zeros();
        p.fc2_b = vec![40.0, -40.0];
        let x = random_input(6);
        let (g, loss) = backward(&p, &[(&x[..], StabilityLabel::Stable)]).unwrap();
        assert!(loss < 1e-30);
        let norm: f64 = g
            .blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum();
        assert!(norm < 1e-60, "{norm}");
    }

    #[test]
    fn tiny_separable_set_is_learned() {
        let dark = vec![0.1f32; 4096];
        let mut bright = vec![0.1f32; 4096];
        for v in bright.iter_mut().take(2048) {
            *v = 0.9;
        }
        let samples = [
            Sample {
                key: "a".into(),
                input: dark,
                label: StabilityLabel::Stable,
            },
            Sample {
                key: "b".into(),
                input: bright,
                label: StabilityLabel::Unstable,
            },
        ];
        let out = train(&samples, &TrainConfig::default()).unwrap();
        assert_eq!(out.curve.len(), 20);
        for s in &samples {
            assert_eq!(
                predict(&out.params, &s.input).unwrap().label,
                s.label,
                "{}",
                s.key
            );
        }
        let reversed = [samples[1].clone(), samples[0].clone()];
        assert_eq!(train(&reversed, &TrainConfig::default()).unwrap(), out);
    }

    #[test]
    fn empty_training_set_rejected() {
        assert_eq!(
            train(&[], &TrainConfig::default()).unwrap_err(),
            LearnError::EmptyTrainingSet
        );
    }
}
