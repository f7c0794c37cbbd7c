//! Forward pass of the auto-encoder: T unrolled FISTA (or ISTA) iterations
//! producing a sparse code, the tied linear decoder, and the objectives used
//! to judge both.
//!
//! Iteration t keeps the state pair z_t = [x_t; x_{t-1}]:
//!
//! ```text
//! s_t = (1 + sqrt(1 + 4 s_{t-1}^2)) / 2
//! w_t = z1_{t-1} + ((s_{t-1} - 1)/s_t) (z1_{t-1} - z2_{t-1})
//! c_t = w_t + (1/L) H^T (y - H w_t)
//! z1_t = shrink(c_t, lambda/L),  z2_t = z1_{t-1}
//! ```
//!
//! with z_0 = 0, s_0 = 0. The decoder applies the same filter bank: the
//! encoder's correlation steps and the decoder are tied to one dictionary.

use serde::{Deserialize, Serialize};

use crate::conv_ops::{apply_adjoint, apply_dictionary, CodeMatrix, FilterBank, SignalWindow};
use crate::error::{config_err, shape_err, CrsaeError, Result};

/// Encoder hyperparameters: sparsity weight, step constant, unroll depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FistaConfig {
    /// Sparsity weight λ of the lasso objective.
    pub lambda: f64,
    /// Step constant L; must dominate the largest eigenvalue of HᵀH.
    pub lipschitz: f64,
    /// Number of unrolled iterations T.
    pub iterations: usize,
}

impl FistaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(config_err(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.lipschitz > 0.0) || !self.lipschitz.is_finite() {
            return Err(config_err(format!(
                "step constant must be > 0, got {}",
                self.lipschitz
            )));
        }
        if self.iterations < 1 {
            return Err(config_err("iteration count must be >= 1"));
        }
        Ok(())
    }

    /// Per-iteration shrinkage threshold λ/L.
    pub fn threshold(&self) -> f64 {
        self.lambda / self.lipschitz
    }
}

/// Per-iteration state recorded during an encoding pass, replayed by the
/// gradient module. Index t runs 1..=T; the momentum scalars include s_0.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    lambda: f64,
    lipschitz: f64,
    s: Vec<f64>,
    w: Vec<CodeMatrix>,
    c: Vec<CodeMatrix>,
    z1: Vec<CodeMatrix>,
    residual: Vec<Vec<f64>>,
}

impl EncoderTrace {
    fn with_capacity(lambda: f64, lipschitz: f64, s0: f64, iterations: usize) -> Self {
        Self {
            lambda,
            lipschitz,
            s: {
                let mut s = Vec::with_capacity(iterations + 1);
                s.push(s0);
                s
            },
            w: Vec::with_capacity(iterations),
            c: Vec::with_capacity(iterations),
            z1: Vec::with_capacity(iterations),
            residual: Vec::with_capacity(iterations),
        }
    }

    pub fn iterations(&self) -> usize {
        self.c.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    /// Momentum scalar s_t for t in 0..=T.
    pub fn momentum(&self, t: usize) -> f64 {
        self.s[t]
    }

    /// Momentum mixing weight (s_{t-1} - 1)/s_t for t in 1..=T.
    pub fn gamma(&self, t: usize) -> f64 {
        (self.s[t - 1] - 1.0) / self.s[t]
    }

    /// Extrapolated point w_t for t in 1..=T.
    pub fn extrapolated(&self, t: usize) -> &CodeMatrix {
        &self.w[t - 1]
    }

    /// Pre-shrinkage point c_t for t in 1..=T.
    pub fn pre_shrink(&self, t: usize) -> &CodeMatrix {
        &self.c[t - 1]
    }

    /// First state component z1_t = shrink(c_t) for t in 1..=T.
    pub fn code(&self, t: usize) -> &CodeMatrix {
        &self.z1[t - 1]
    }

    /// Second state component z2_t = z1_{t-1}; zero when t = 1.
    pub fn delayed_code(&self, t: usize) -> CodeMatrix {
        if t >= 2 {
            self.z1[t - 2].clone()
        } else {
            let c = &self.z1[0];
            CodeMatrix::zeros(c.channels(), c.positions())
        }
    }

    /// Forward residual y − H w_t for t in 1..=T.
    pub fn residual(&self, t: usize) -> &[f64] {
        &self.residual[t - 1]
    }

    pub fn final_code(&self) -> &CodeMatrix {
        self.z1.last().expect("trace holds at least one iteration")
    }
}

/// Element-wise soft threshold: (|v| − eps)₊ · sgn(v). Entries at or below
/// the threshold map to exact zeros.
pub fn shrink(v: &CodeMatrix, eps: f64) -> Result<CodeMatrix> {
    if !(eps >= 0.0) {
        return Err(config_err(format!("shrinkage threshold must be >= 0, got {eps}")));
    }
    let mut out = CodeMatrix::zeros(v.channels(), v.positions());
    shrink_into(v.as_slice(), eps, out.as_mut_slice());
    Ok(out)
}

#[inline(always)]
fn soft(v: f64, eps: f64) -> f64 {
    if v > eps {
        v - eps
    } else if v < -eps {
        v + eps
    } else {
        0.0
    }
}

#[inline]
fn shrink_into(src: &[f64], eps: f64, out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(src) {
        *o = soft(v, eps);
    }
}

/// Momentum recurrence s_t = (1 + sqrt(1 + 4 s_{t-1}^2)) / 2.
pub fn momentum_next(s_prev: f64) -> f64 {
    debug_assert!(s_prev >= 0.0);
    (1.0 + (1.0 + 4.0 * s_prev * s_prev).sqrt()) / 2.0
}

/// Runs T unrolled FISTA iterations; returns the sparse code z1_T and,
/// when `record` is set, the full trace needed for gradient replay.
pub fn fista_encode(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
    record: bool,
) -> Result<(CodeMatrix, Option<EncoderTrace>)> {
    encode_impl(y, filters, cfg, record, true)
}

/// ISTA variant: no momentum (w_t = z1_{t-1}); used by the unconstrained
/// baseline and as the degenerate case of the recorded trace (s_t ≡ 1).
pub fn ista_encode(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
    record: bool,
) -> Result<(CodeMatrix, Option<EncoderTrace>)> {
    encode_impl(y, filters, cfg, record, false)
}

/// How far ‖c_t‖∞ may grow over its t=1 value before the pass aborts.
const DIVERGENCE_RATIO: f64 = 1e6;

fn encode_impl(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
    record: bool,
    momentum: bool,
) -> Result<(CodeMatrix, Option<EncoderTrace>)> {
    cfg.validate()?;
    let k = filters.filter_len();
    let w_len = y.len();
    if w_len < k {
        return Err(shape_err(format!(
            "window of {w_len} samples is shorter than filter length {k}"
        )));
    }
    let ne = w_len - k + 1;
    let channels = filters.filter_count();
    let threshold = cfg.threshold();
    let inv_l = 1.0 / cfg.lipschitz;

    let s0 = if momentum { 0.0 } else { 1.0 };
    let mut trace = record.then(|| EncoderTrace::with_capacity(cfg.lambda, cfg.lipschitz, s0, cfg.iterations));

    let mut z1_prev = CodeMatrix::zeros(channels, ne);
    let mut z2_prev = CodeMatrix::zeros(channels, ne);
    let mut s_prev = s0;
    let mut guard_base = 0.0;

    for t in 1..=cfg.iterations {
        let s_t = if momentum { momentum_next(s_prev) } else { 1.0 };
        let gamma = (s_prev - 1.0) / s_t;

        let w_t = CodeMatrix::from_vec_unchecked(
            channels,
            ne,
            z1_prev
                .as_slice()
                .iter()
                .zip(z2_prev.as_slice())
                .map(|(&a, &b)| a + gamma * (a - b))
                .collect(),
        );

        let image = apply_dictionary(filters, &w_t)?;
        let residual: Vec<f64> = y.samples().iter().zip(&image).map(|(a, b)| a - b).collect();
        let pulled = apply_adjoint(filters, &residual)?;

        let c_t = CodeMatrix::from_vec_unchecked(
            channels,
            ne,
            w_t.as_slice()
                .iter()
                .zip(pulled.as_slice())
                .map(|(&w, &p)| w + inv_l * p)
                .collect(),
        );

        let c_inf = c_t.max_abs();
        if !c_inf.is_finite() {
            return Err(CrsaeError::EncoderDiverged {
                iteration: t,
                reason: "non-finite pre-shrinkage values; check lambda and the step constant".into(),
            });
        }
        if t == 1 {
            guard_base = c_inf.max(f64::MIN_POSITIVE);
        } else if c_inf > DIVERGENCE_RATIO * guard_base {
            return Err(CrsaeError::EncoderDiverged {
                iteration: t,
                reason: format!(
                    "|c_t| grew beyond {DIVERGENCE_RATIO:.0e} times its first-iteration value; \
                     step constant is likely below the largest eigenvalue of H^T H"
                ),
            });
        }

        let z1_t = CodeMatrix::from_vec_unchecked(
            channels,
            ne,
            c_t.as_slice().iter().map(|&v| soft(v, threshold)).collect(),
        );

        if let Some(tr) = trace.as_mut() {
            tr.s.push(s_t);
            tr.w.push(w_t);
            tr.c.push(c_t);
            tr.z1.push(z1_t.clone());
            tr.residual.push(residual);
        }

        z2_prev = std::mem::replace(&mut z1_prev, z1_t);
        s_prev = s_t;
    }

    Ok((z1_prev, trace))
}

/// Decoder: ŷ = H z1_T. The same operator as [`apply_dictionary`]; the call
/// is forwarded so the tying is structural, not a convention.
pub fn decode(filters: &FilterBank, code: &CodeMatrix) -> Result<Vec<f64>> {
    apply_dictionary(filters, code)
}

/// ½‖y − ŷ‖₂².
pub fn reconstruction_loss(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    if y.len() != y_hat.len() {
        return Err(shape_err(format!(
            "loss operands differ in length: {} vs {}",
            y.len(),
            y_hat.len()
        )));
    }
    let mut acc = 0.0;
    for (a, b) in y.iter().zip(y_hat) {
        let d = a - b;
        acc += d * d;
    }
    Ok(0.5 * acc)
}

/// Lasso objective ½‖y − Hx‖₂² + λ‖x‖₁; the convergence oracle for the
/// encoder.
pub fn lasso_objective(
    y: &[f64],
    filters: &FilterBank,
    code: &CodeMatrix,
    lambda: f64,
) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(config_err(format!("lambda must be >= 0, got {lambda}")));
    }
    let y_hat = apply_dictionary(filters, code)?;
    if y_hat.len() != y.len() {
        return Err(shape_err(format!(
            "code implies {} samples but the window has {}",
            y_hat.len(),
            y.len()
        )));
    }
    Ok(reconstruction_loss(y, &y_hat)? + lambda * code.l1_norm())
}
