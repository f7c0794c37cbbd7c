//! The dictionary operator H and its adjoint Hᵀ as sums of 1-D
//! convolutions/correlations, plus a power-iteration bound on the largest
//! eigenvalue of HᵀH.
//!
//! Codes live on the valid grid: a window of W samples and filters of length
//! K give N_e = W − K + 1 code positions per channel, so H x is a full linear
//! convolution that lands exactly on W samples and no padding policy is
//! needed. The block-Toeplitz matrix is never materialized; everything below
//! is O(C·K·N_e) loops over contiguous slices.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, CrsaeError, Result};

/// The trainable dictionary: C filters of K samples each, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    data: Vec<f64>,
    filter_count: usize,
    filter_len: usize,
}

impl FilterBank {
    pub fn zeros(filter_count: usize, filter_len: usize) -> Result<Self> {
        if filter_count == 0 || filter_len == 0 {
            return Err(config_err("filter bank needs C >= 1 and K >= 1"));
        }
        Ok(Self {
            data: vec![0.0; filter_count * filter_len],
            filter_count,
            filter_len,
        })
    }

    pub fn from_flat(filter_count: usize, filter_len: usize, data: Vec<f64>) -> Result<Self> {
        if filter_count == 0 || filter_len == 0 {
            return Err(config_err("filter bank needs C >= 1 and K >= 1"));
        }
        if data.len() != filter_count * filter_len {
            return Err(shape_err(format!(
                "filter bank expects {}x{}={} entries, got {}",
                filter_count,
                filter_len,
                filter_count * filter_len,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CrsaeError::NonFinite {
                context: "filter bank entries".into(),
            });
        }
        Ok(Self {
            data,
            filter_count,
            filter_len,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(config_err("filter bank needs C >= 1"));
        }
        let k = rows[0].len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(shape_err("filter rows have unequal lengths"));
        }
        let data: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_flat(rows.len(), k, data)
    }

    pub fn filter_count(&self) -> usize {
        self.filter_count
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn filter(&self, c: usize) -> &[f64] {
        &self.data[c * self.filter_len..(c + 1) * self.filter_len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// L2 norm of each filter row.
    pub fn row_norms(&self) -> Vec<f64> {
        (0..self.filter_count)
            .map(|c| l2_norm(self.filter(c)))
            .collect()
    }

    /// Returns a bank with `delta` added entrywise (same shape).
    pub fn add_flat(&self, delta: &[f64]) -> Result<Self> {
        if delta.len() != self.data.len() {
            return Err(shape_err(format!(
                "delta has {} entries, bank has {}",
                delta.len(),
                self.data.len()
            )));
        }
        let data: Vec<f64> = self.data.iter().zip(delta).map(|(a, b)| a + b).collect();
        Self::from_flat(self.filter_count, self.filter_len, data)
    }
}

/// One training example: W contiguous samples cut from a longer recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    samples: Vec<f64>,
    window_index: usize,
}

impl SignalWindow {
    pub fn new(samples: Vec<f64>, window_index: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(CrsaeError::EmptyInput("signal window".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(CrsaeError::NonFinite {
                context: format!("window {window_index} samples"),
            });
        }
        Ok(Self {
            samples,
            window_index,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn window_index(&self) -> usize {
        self.window_index
    }
}

/// Sparse code for one window: C channels by N_e positions, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    data: Vec<f64>,
    channels: usize,
    positions: usize,
}

impl CodeMatrix {
    pub fn zeros(channels: usize, positions: usize) -> Self {
        Self {
            data: vec![0.0; channels * positions],
            channels,
            positions,
        }
    }

    pub fn from_flat(channels: usize, positions: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * positions {
            return Err(shape_err(format!(
                "code matrix expects {}x{}={} entries, got {}",
                channels,
                positions,
                channels * positions,
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(CrsaeError::NonFinite {
                context: "code matrix entries".into(),
            });
        }
        Ok(Self {
            data,
            channels,
            positions,
        })
    }

    /// Internal constructor for values produced by arithmetic on validated
    /// inputs; skips the finiteness scan (encoders re-check via their
    /// divergence guards).
    pub(crate) fn from_vec_unchecked(channels: usize, positions: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), channels * positions);
        Self {
            data,
            channels,
            positions,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.positions..(c + 1) * self.positions]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.positions..(c + 1) * self.positions]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Number of nonzero entries.
    pub fn support_size(&self) -> usize {
        self.data.iter().filter(|v| **v != 0.0).count()
    }
}

/// y = Hx: sum over channels of the full convolution h_c * x_c, landing on
/// exactly W = N_e + K − 1 samples.
pub fn apply_dictionary(filters: &FilterBank, code: &CodeMatrix) -> Result<Vec<f64>> {
    if code.channels() != filters.filter_count() {
        return Err(shape_err(format!(
            "code has {} channels, filter bank has {} filters",
            code.channels(),
            filters.filter_count()
        )));
    }
    let k = filters.filter_len();
    let ne = code.positions();
    let w = ne + k - 1;
    let mut out = vec![0.0; w];
    for c in 0..filters.filter_count() {
        let h = filters.filter(c);
        let x = code.channel(c);
        for (j, &hj) in h.iter().enumerate() {
            axpy(hj, x, &mut out[j..j + ne]);
        }
    }
    Ok(out)
}

/// Hᵀy: correlation of the signal against every filter on the valid grid,
/// out[c][n] = Σ_k h_c[k]·y[n+k].
pub fn apply_adjoint(filters: &FilterBank, signal: &[f64]) -> Result<CodeMatrix> {
    let k = filters.filter_len();
    let w = signal.len();
    if w < k {
        return Err(shape_err(format!(
            "signal of {w} samples is shorter than filter length {k}"
        )));
    }
    let ne = w - k + 1;
    let mut code = CodeMatrix::zeros(filters.filter_count(), ne);
    for c in 0..filters.filter_count() {
        let h = filters.filter(c);
        let out = code.channel_mut(c);
        for (j, &hj) in h.iter().enumerate() {
            axpy(hj, &signal[j..j + ne], out);
        }
    }
    Ok(code)
}

/// Correlates a W-sample signal against each code channel at filter lags,
/// accumulating `scale · Σ_n code[c][n]·signal[n+k]` into `out[c·K+k]`.
///
/// This is the Jacobian-vector product that maps a signal-domain or
/// code-domain sensitivity onto filter coefficients; the gradient replay is
/// built entirely from it plus the two operators above.
pub(crate) fn lag_correlate_into(
    code: &CodeMatrix,
    signal: &[f64],
    filter_len: usize,
    scale: f64,
    out: &mut [f64],
) {
    let ne = code.positions();
    debug_assert!(signal.len() >= ne + filter_len - 1);
    debug_assert_eq!(out.len(), code.channels() * filter_len);
    for c in 0..code.channels() {
        let x = code.channel(c);
        let row = &mut out[c * filter_len..(c + 1) * filter_len];
        for (k, slot) in row.iter_mut().enumerate() {
            *slot += scale * dot(x, &signal[k..k + ne]);
        }
    }
}

/// Power-iteration estimate of the largest eigenvalue of HᵀH.
#[derive(Debug, Clone, Copy)]
pub struct LipschitzEstimate {
    /// Safe step constant: 1.01 × the eigenvalue estimate.
    pub value: f64,
    /// Raw Rayleigh-quotient estimate without the safety factor.
    pub raw_estimate: f64,
    /// False when the iteration hit `max_iters` before the tolerance.
    pub converged: bool,
    pub iterations: usize,
}

const POWER_ITERATION_SEED: u64 = 0x9d2c_5680_1f83_d9ab;
const LIPSCHITZ_SAFETY: f64 = 0.01;

/// Estimates L ≥ λ_max(HᵀH) by power iteration on the composed operators,
/// returning (1 + 0.01)·λ̂. Deterministic: the start vector comes from a
/// fixed internal seed.
pub fn estimate_lipschitz(
    filters: &FilterBank,
    window_len: usize,
    max_iters: usize,
    tol: f64,
) -> Result<LipschitzEstimate> {
    if max_iters < 1 {
        return Err(config_err("max_iters must be >= 1"));
    }
    if !(tol > 0.0) {
        return Err(config_err("tol must be > 0"));
    }
    let k = filters.filter_len();
    if window_len < k {
        return Err(shape_err(format!(
            "window length {window_len} shorter than filter length {k}"
        )));
    }
    let ne = window_len - k + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_ITERATION_SEED);
    let mut v = CodeMatrix::zeros(filters.filter_count(), ne);
    for slot in v.as_mut_slice() {
        *slot = rng.gen_range(-1.0..1.0);
    }
    normalize(v.as_mut_slice());

    let mut rayleigh = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iters {
        iterations = it;
        let image = apply_dictionary(filters, &v)?;
        let pulled = apply_adjoint(filters, &image)?;
        let next = dot(v.as_slice(), pulled.as_slice());
        let norm = l2_norm(pulled.as_slice());
        if norm == 0.0 {
            // Zero operator (or v in its null space with nothing to amplify).
            rayleigh = 0.0;
            converged = true;
            break;
        }
        let rel_change = (next - rayleigh).abs() / next.abs().max(f64::MIN_POSITIVE);
        rayleigh = next;
        v = pulled;
        let inv = 1.0 / norm;
        for slot in v.as_mut_slice() {
            *slot *= inv;
        }
        if it > 1 && rel_change <= tol {
            converged = true;
            break;
        }
    }
    Ok(LipschitzEstimate {
        value: (1.0 + LIPSCHITZ_SAFETY) * rayleigh,
        raw_estimate: rayleigh,
        converged,
        iterations,
    })
}

/// out[i] += a·x[i]; the single kernel both operators reduce to.
#[inline]
fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, &xi) in out.iter_mut().zip(x) {
        *o += a * xi;
    }
}

/// Dot product with eight independent accumulators so the reduction
/// vectorizes without reassociation flags.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            acc[i] += xa[i] * xb[i];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))) + tail
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = l2_norm(v);
    if n > 0.0 {
        let inv = 1.0 / n;
        for x in v {
            *x *= inv;
        }
    }
}
