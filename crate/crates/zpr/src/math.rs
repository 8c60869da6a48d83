//! Dense numeric kernels: tensors, parameter storage with Adagrad state,
//! elementwise/affine forward-backward pairs, softmax, inverted dropout,
//! a seeded RNG stream, and the central finite-difference gradient oracle.
//!
//! All arithmetic is `f64`; gradient-check tolerances are the backbone of the
//! project and single precision does not leave enough headroom.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Adagrad stabilizer added to the accumulator square root.
pub const ADAGRAD_EPS: f64 = 1e-8;

/// Half-width of the uniform interval used to initialize weight matrices.
pub const INIT_SCALE: f64 = 0.08;

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

/// Row-major dense matrix of `f64`. Vectors are tensors with `cols == 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor { rows: data.len(), cols: 1, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length mismatch");
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite tensor data");
        Tensor { rows, cols, data }
    }

    /// Fill from a uniform(-scale, scale) draw; biases are created with `zeros`.
    pub fn uniform(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Self {
        let data = (0..rows * cols).map(|_| rng.range(-scale, scale)).collect();
        Tensor { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_vector(&self) -> bool {
        self.cols == 1
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// out = W.x + b accumulated into `out` (y += so callers can chain terms).
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(self.cols, x.len(), "matvec dimension mismatch");
        assert_eq!(self.rows, out.len(), "matvec output dimension mismatch");
        for r in 0..self.rows {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x.iter()) {
                acc += w * v;
            }
            out[r] += acc;
        }
    }

    /// out += W^T . d  (gradient through a matvec back to its input).
    pub fn matvec_transpose_acc(&self, d: &[f64], out: &mut [f64]) {
        assert_eq!(self.rows, d.len(), "transpose matvec dimension mismatch");
        assert_eq!(self.cols, out.len(), "transpose matvec output mismatch");
        for r in 0..self.rows {
            let dv = d[r];
            if dv == 0.0 {
                continue;
            }
            let row = self.row(r);
            for (o, w) in out.iter_mut().zip(row.iter()) {
                *o += dv * w;
            }
        }
    }

    /// self += d ⊗ x (outer-product accumulation, the dW of an affine layer).
    pub fn add_outer(&mut self, d: &[f64], x: &[f64]) {
        assert_eq!(self.rows, d.len(), "outer product row mismatch");
        assert_eq!(self.cols, x.len(), "outer product col mismatch");
        for r in 0..self.rows {
            let dv = d[r];
            if dv == 0.0 {
                continue;
            }
            let row = self.row_mut(r);
            for (w, v) in row.iter_mut().zip(x.iter()) {
                *w += dv * v;
            }
        }
    }

    pub fn add_slice(&mut self, d: &[f64]) {
        assert_eq!(self.data.len(), d.len(), "slice accumulate mismatch");
        for (w, v) in self.data.iter_mut().zip(d.iter()) {
            *w += v;
        }
    }

    pub fn debug_assert_finite(&self, what: &str) {
        debug_assert!(self.data.iter().all(|v| v.is_finite()), "non-finite values in {what}");
    }
}

// ---------------------------------------------------------------------------
// Elementwise / affine kernels
// ---------------------------------------------------------------------------

/// W.x + b.
pub fn affine(w: &Tensor, x: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(w.rows(), b.len(), "affine bias dimension mismatch");
    let mut out = b.to_vec();
    w.matvec_acc(x, &mut out);
    out
}

/// Backward of `affine`: accumulates dW and db in place, returns dx.
pub fn affine_backward(
    w: &Tensor,
    x: &[f64],
    d_out: &[f64],
    dw: &mut Tensor,
    db: &mut [f64],
) -> Vec<f64> {
    dw.add_outer(d_out, x);
    for (g, d) in db.iter_mut().zip(d_out.iter()) {
        *g += d;
    }
    let mut dx = vec![0.0; x.len()];
    w.matvec_transpose_acc(d_out, &mut dx);
    dx
}

pub fn tanh_elem(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// d_in = d_out ⊙ (1 - out²); `out` is the forward activation.
pub fn tanh_backward(out: &[f64], d_out: &[f64]) -> Vec<f64> {
    out.iter().zip(d_out.iter()).map(|(o, d)| d * (1.0 - o * o)).collect()
}

/// Overflow-safe softmax: p_i = exp(s_i - max) / Σ exp(s_j - max).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    assert!(!scores.is_empty(), "softmax of empty score vector");
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    debug_assert!(max.is_finite(), "non-finite softmax input");
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Inverted dropout. Training mode zeroes units with probability `rate` and
/// scales survivors by 1/(1-rate); inference is the identity. The returned
/// mask holds the applied scale factors so backward can reuse them.
pub fn dropout(
    x: &[f64],
    rate: f64,
    rng: &mut RngStream,
    training: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Argument(format!("dropout rate {rate} outside [0,1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.to_vec(), vec![1.0; x.len()]));
    }
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let mask: Vec<f64> =
        (0..x.len()).map(|_| if rng.uniform() < rate { 0.0 } else { scale }).collect();
    let out = x.iter().zip(mask.iter()).map(|(v, m)| v * m).collect();
    Ok((out, mask))
}

// ---------------------------------------------------------------------------
// Parameter store
// ---------------------------------------------------------------------------

/// One named parameter group: its value, gradient accumulator, and Adagrad
/// squared-gradient accumulator, all shape-identical.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub accum: Tensor,
}

/// Named map of trainable parameters. Iteration order is name-sorted, which
/// keeps every gradient walk and the checkpoint layout deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    version: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(value.rows(), value.cols());
        let accum = Tensor::zeros(value.rows(), value.cols());
        let prev = self.entries.insert(name.to_string(), ParamEntry { value, grad, accum });
        assert!(prev.is_none(), "duplicate parameter name {name}");
    }

    /// Restore a fully materialized entry (checkpoint load path).
    pub fn insert_entry(&mut self, name: &str, entry: ParamEntry) {
        assert_eq!(entry.value.rows(), entry.grad.rows(), "entry shape mismatch for {name}");
        assert_eq!(entry.value.len(), entry.accum.len(), "entry shape mismatch for {name}");
        self.entries.insert(name.to_string(), entry);
    }

    #[track_caller]
    pub fn value(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    #[track_caller]
    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).value
    }

    #[track_caller]
    pub fn grad(&self, name: &str) -> &Tensor {
        &self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    #[track_caller]
    pub fn grad_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}")).grad
    }

    #[track_caller]
    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.entries.get(name).unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    /// Simultaneous &value / &mut grad access for backward passes.
    #[track_caller]
    pub fn value_and_grad_mut(&mut self, name: &str) -> (&Tensor, &mut Tensor) {
        let e = self.entries.get_mut(name).unwrap_or_else(|| panic!("unknown parameter {name}"));
        (&e.value, &mut e.grad)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn n_params(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Monotone counter bumped by every parameter update; forward caches
    /// record it so stale-cache reuse across updates can be detected.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(0.0);
        }
    }

    /// Adagrad update: accum += g²; value -= lr·g/(√accum + eps); grads are
    /// zeroed afterwards.
    pub fn adagrad_step(&mut self, lr: f64, eps: f64) {
        for e in self.entries.values_mut() {
            let grads = e.grad.data_mut();
            let accums = e.accum.data_mut();
            let values = e.value.data_mut();
            for i in 0..grads.len() {
                let g = grads[i];
                accums[i] += g * g;
                values[i] -= lr * g / (accums[i].sqrt() + eps);
                grads[i] = 0.0;
            }
            e.value.debug_assert_finite("adagrad-updated value");
        }
        self.version += 1;
    }

    /// Gradients flattened in name-sorted, row-major order.
    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for e in self.entries.values() {
            out.extend_from_slice(e.grad.data());
        }
        out
    }

    /// Values flattened in the same order as `flat_grads`.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for e in self.entries.values() {
            out.extend_from_slice(e.value.data());
        }
        out
    }
}

/// Flatten a name → tensor map (e.g. a finite-difference result) in the same
/// order `ParamStore::flat_grads` uses.
pub fn flatten_grad_map(map: &BTreeMap<String, Tensor>) -> Vec<f64> {
    let mut out = Vec::new();
    for t in map.values() {
        out.extend_from_slice(t.data());
    }
    out
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central-difference gradient of a scalar function of the whole store:
/// (f(θ+eps·e) - f(θ-eps·e)) / (2 eps) per coordinate. The function must be
/// deterministic given the store (dropout off / rng frozen).
pub fn finite_diff_grad<F>(
    f: F,
    store: &mut ParamStore,
    eps: f64,
) -> Result<BTreeMap<String, Tensor>>
where
    F: Fn(&ParamStore) -> f64,
{
    let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
    let mut out = BTreeMap::new();
    for name in names {
        let (rows, cols, len) = {
            let t = store.value(&name);
            (t.rows(), t.cols(), t.len())
        };
        let mut grad = Tensor::zeros(rows, cols);
        for i in 0..len {
            let orig = store.value(&name).data()[i];
            store.value_mut(&name).data_mut()[i] = orig + eps;
            let f_plus = f(store);
            store.value_mut(&name).data_mut()[i] = orig - eps;
            let f_minus = f(store);
            store.value_mut(&name).data_mut()[i] = orig;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite objective while differencing {name}[{i}]"
                )));
            }
            grad.data_mut()[i] = (f_plus - f_minus) / (2.0 * eps);
        }
        out.insert(name, grad);
    }
    Ok(out)
}

/// Relative error used by every gradient check: |a-b| / max(floor, |a|, |b|).
/// The floor keeps genuinely-zero coordinates from being compared against
/// finite-difference rounding noise.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1e-4, f64::max(a.abs(), b.abs()))
}

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

/// Seeded deterministic random stream. All draws are derived from the ChaCha8
/// keystream directly so sequences are stable across platforms and releases.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent child stream; used to give corpus generation, training,
    /// and per-worker evaluation their own deterministic sequences.
    pub fn derive(&self, tag: u64) -> Self {
        let mut seed = [0u8; 32];
        let base = self.rng.get_seed();
        seed.copy_from_slice(&base);
        for (i, b) in tag.to_le_bytes().iter().enumerate() {
            seed[24 + i] ^= b.wrapping_mul(0x9e).wrapping_add(i as u8 ^ 0x3d) ^ b;
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(0);
        RngStream { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in [0, 1) with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in [0, n).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        (self.uniform() * n as f64) as usize % n
    }

    /// Uniform integer in the inclusive range.
    pub fn int_in(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "empty integer range");
        lo + self.index(hi - lo + 1)
    }

    /// Fisher-Yates shuffle driven by this stream.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// Serializable state: (seed bytes, word position in the keystream).
    pub fn state(&self) -> ([u8; 32], u128) {
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&self.rng.get_seed());
        (seed, self.rng.get_word_pos())
    }

    pub fn restore(seed: [u8; 32], word_pos: u128) -> Self {
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_word_pos(word_pos);
        RngStream { rng }
    }
}
