//! Projected-ADAM training over windows: seeded shuffling, parallel batch
//! gradients reduced in order, unit-ball projection after every step,
//! validation-based early stopping, and the hyperparameter helpers
//! (noise-level estimate, λ rule, learning-rate range test, perturbed
//! initialization).

pub mod lcsc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conv_ops::{estimate_lipschitz, normalize, CodeMatrix, FilterBank, SignalWindow};
use crate::encoder::{decode, fista_encode, reconstruction_loss, FistaConfig};
use crate::error::{config_err, CrsaeError, Result};
use crate::gradient::{batch_gradient, FilterGradient};
use crate::metrics::match_filters;

/// Convention for turning a residual vector into a noise scale σ̂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseConvention {
    /// σ̂ = ‖r‖₂ / N. Not the RMS noise level, but kept as the default
    /// convention; see `RootMeanSquare` for the statistically matching one.
    NormOverLength,
    /// σ̂ = ‖r‖₂ / √N, the per-sample noise standard deviation.
    RootMeanSquare,
}

/// Noise scale of a residual under the chosen convention.
pub fn noise_std_estimate(residual: &[f64], convention: NoiseConvention) -> Result<f64> {
    if residual.is_empty() {
        return Err(CrsaeError::EmptyInput("residual".into()));
    }
    let norm = crate::conv_ops::l2_norm(residual);
    let n = residual.len() as f64;
    Ok(match convention {
        NoiseConvention::NormOverLength => norm / n,
        NoiseConvention::RootMeanSquare => norm / n.sqrt(),
    })
}

/// λ = scale · σ̂ · sqrt(2 · ln(C · N_e)), the universal-threshold rule for
/// C·N_e coefficients at noise level σ̂.
pub fn lambda_heuristic(sigma_n: f64, channels: usize, positions: usize, scale: f64) -> Result<f64> {
    if !(sigma_n >= 0.0) {
        return Err(config_err("sigma must be >= 0"));
    }
    if !(scale > 0.0) {
        return Err(config_err("scale must be > 0"));
    }
    if channels == 0 || positions == 0 {
        return Err(config_err("need at least one coefficient"));
    }
    let m = (channels * positions) as f64;
    Ok(scale * sigma_n * (2.0 * m.ln()).sqrt())
}

/// Row-wise projection onto the unit L2 ball: h ← h / max(1, ‖h‖). Rows
/// already inside the ball are returned bit-for-bit.
pub fn project_unit_ball(filters: &FilterBank) -> FilterBank {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(filters.filter_count());
    for c in 0..filters.filter_count() {
        let row = filters.filter(c);
        let norm = crate::conv_ops::l2_norm(row);
        if norm > 1.0 {
            let inv = 1.0 / norm;
            rows.push(row.iter().map(|v| v * inv).collect());
        } else {
            rows.push(row.to_vec());
        }
    }
    FilterBank::from_rows(&rows).expect("projection preserves shape and finiteness")
}

/// Bias-corrected ADAM accumulator. Works over any flat parameter vector;
/// the trainer uses one per filter bank and (for the baseline) one for λ.
#[derive(Debug, Clone)]
pub struct AdamState {
    beta1: f64,
    beta2: f64,
    eps: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
}

impl AdamState {
    pub fn new(len: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update on a raw slice; returns the additive deltas.
    pub(crate) fn step_slice(&self, grad: &[f64], lr: f64) -> Result<(AdamState, Vec<f64>)> {
        if grad.len() != self.first_moment.len() {
            return Err(CrsaeError::ShapeMismatch(format!(
                "gradient has {} entries, optimizer state has {}",
                grad.len(),
                self.first_moment.len()
            )));
        }
        let mut next = self.clone();
        next.step_count += 1;
        let t = next.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut delta = vec![0.0; grad.len()];
        for i in 0..grad.len() {
            let g = grad[i];
            next.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            next.second_moment[i] = self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = next.first_moment[i] / bc1;
            let v_hat = next.second_moment[i] / bc2;
            delta[i] = -lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok((next, delta))
    }
}

/// Standard ADAM update; the delta is the additive filter change (apply it,
/// then project).
pub fn adam_step(
    state: &AdamState,
    grad: &FilterGradient,
    lr: f64,
) -> Result<(AdamState, FilterGradient)> {
    let (next, delta) = state.step_slice(grad.as_slice(), lr)?;
    let mut out = FilterGradient::zeros(grad.filter_count(), grad.filter_len());
    out.as_mut_slice().copy_from_slice(&delta);
    Ok((next, out))
}

/// How λ is resolved when training starts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaPolicy {
    /// Use this value verbatim.
    Fixed(f64),
    /// λ from [`lambda_heuristic`] with a caller-supplied noise scale.
    Heuristic { sigma_n: f64, scale: f64 },
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without a new best validation loss before stopping (>= 1; use
    /// `max_epochs` to disable early stopping).
    pub patience: usize,
    /// Overrides the λ in the encoder config when set.
    #[serde(default)]
    pub lambda_policy: Option<LambdaPolicy>,
    /// Optional per-epoch multiplicative λ schedule; off by default.
    #[serde(default)]
    pub lambda_decay: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    /// Re-estimate the step constant from the current filters each epoch.
    #[serde(default)]
    pub recompute_lipschitz: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(config_err("batch size must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(config_err("learning rate must be >= 0"));
        }
        if self.max_epochs == 0 {
            return Err(config_err("max epochs must be >= 1"));
        }
        if self.patience == 0 {
            return Err(config_err("patience must be >= 1"));
        }
        if let Some(d) = self.lambda_decay {
            if !(d > 0.0 && d <= 1.0) {
                return Err(config_err("lambda decay must lie in (0, 1]"));
            }
        }
        for (name, v) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(v >= 0.0 && v < 1.0) {
                return Err(config_err(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(config_err("adam_eps must be > 0"));
        }
        Ok(())
    }
}

/// Losses (and recovery errors when ground truth is known) for one epoch.
#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Raw (unshifted) recovery error per true filter.
    pub recovery_errs: Option<Vec<f64>>,
}

/// Outcome of a training run. `filters` come from the epoch with minimal
/// validation loss.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub filters: FilterBank,
    /// λ actually used at the start of training (after policy resolution).
    pub lambda: f64,
    /// Step constant used at the start of training.
    pub lipschitz: f64,
}

/// Mean forward-only reconstruction loss over a window set.
pub fn validation_loss(
    windows: &[SignalWindow],
    filters: &FilterBank,
    fista: &FistaConfig,
) -> Result<f64> {
    if windows.is_empty() {
        return Err(CrsaeError::EmptyInput("validation windows".into()));
    }
    let losses: Vec<Result<f64>> = windows
        .par_iter()
        .map(|y| {
            let (code, _) = fista_encode(y, filters, fista, false)?;
            let y_hat = decode(filters, &code)?;
            reconstruction_loss(y.samples(), &y_hat)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / windows.len() as f64)
}

fn check_windows(windows: &[SignalWindow], filters: &FilterBank, role: &str) -> Result<usize> {
    if windows.is_empty() {
        return Err(CrsaeError::EmptyInput(format!("{role} windows")));
    }
    let w = windows[0].len();
    if windows.iter().any(|x| x.len() != w) {
        return Err(CrsaeError::ShapeMismatch(format!(
            "{role} windows have unequal lengths"
        )));
    }
    if w < filters.filter_len() {
        return Err(CrsaeError::ShapeMismatch(format!(
            "{role} windows of {w} samples are shorter than the filters"
        )));
    }
    Ok(w)
}

fn resolve_lambda(
    policy: &Option<LambdaPolicy>,
    fallback: f64,
    channels: usize,
    positions: usize,
) -> Result<f64> {
    match policy {
        None => Ok(fallback),
        Some(LambdaPolicy::Fixed(v)) => Ok(*v),
        Some(LambdaPolicy::Heuristic { sigma_n, scale }) => {
            lambda_heuristic(*sigma_n, channels, positions, *scale)
        }
    }
}

/// Raw recovery errors ordered by true-filter index.
fn recovery_against(truth: &FilterBank, learned: &FilterBank) -> Result<Vec<f64>> {
    let report = match_filters(truth, learned, 0)?;
    Ok(report.matches.iter().map(|m| m.raw_err).collect())
}

/// Full training loop. Per epoch: seeded shuffle, mini-batches of parallel
/// window gradients reduced in order, one ADAM step and a unit-ball
/// projection per batch, then a forward-only validation pass. Stops after
/// `patience` epochs without validation improvement and returns the filters
/// from the best epoch.
pub fn train(
    train_windows: &[SignalWindow],
    val_windows: &[SignalWindow],
    init_filters: &FilterBank,
    fista: &FistaConfig,
    cfg: &TrainConfig,
    ground_truth: Option<&FilterBank>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let w = check_windows(train_windows, init_filters, "training")?;
    let w_val = check_windows(val_windows, init_filters, "validation")?;
    if w != w_val {
        return Err(CrsaeError::ShapeMismatch(format!(
            "training windows have {w} samples, validation windows {w_val}"
        )));
    }
    let positions = w - init_filters.filter_len() + 1;
    let lambda = resolve_lambda(&cfg.lambda_policy, fista.lambda, init_filters.filter_count(), positions)?;
    let mut fista_now = FistaConfig {
        lambda,
        lipschitz: fista.lipschitz,
        iterations: fista.iterations,
    };
    fista_now.validate()?;
    let initial_lipschitz = fista_now.lipschitz;

    let mut filters = project_unit_ball(init_filters);
    let mut adam = AdamState::new(
        init_filters.filter_count() * init_filters.filter_len(),
        cfg.adam_beta1,
        cfg.adam_beta2,
        cfg.adam_eps,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let initial_val_loss = validation_loss(val_windows, &filters, &fista_now)?;

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val_loss = f64::INFINITY;
    let mut best_filters = filters.clone();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<SignalWindow> =
                chunk.iter().map(|&i| train_windows[i].clone()).collect();
            let (grad, mean_loss) = batch_gradient(&batch, &filters, &fista_now)?;
            if !mean_loss.is_finite() {
                return Err(CrsaeError::TrainingDiverged {
                    epoch,
                    batch: batch_index,
                });
            }
            loss_sum += mean_loss * batch.len() as f64;
            let (next_adam, delta) = adam_step(&adam, &grad, cfg.learning_rate)?;
            adam = next_adam;
            filters = project_unit_ball(&filters.add_flat(delta.as_slice())?);
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val_loss = validation_loss(val_windows, &filters, &fista_now)?;
        if !val_loss.is_finite() {
            return Err(CrsaeError::TrainingDiverged { epoch, batch: 0 });
        }
        let recovery_errs = match ground_truth {
            Some(gt) => Some(recovery_against(gt, &filters)?),
            None => None,
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            recovery_errs,
        });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_filters = filters.clone();
        }
        if epoch - best_epoch >= cfg.patience {
            break;
        }
        if let Some(decay) = cfg.lambda_decay {
            fista_now.lambda *= decay;
        }
        if cfg.recompute_lipschitz {
            fista_now.lipschitz = estimate_lipschitz(&filters, w, 1000, 1e-7)?.value;
        }
    }

    Ok(TrainReport {
        epochs,
        initial_val_loss,
        best_epoch,
        best_val_loss,
        filters: best_filters,
        lambda,
        lipschitz: initial_lipschitz,
    })
}

/// Runs one epoch per grid point from the same initialization and returns
/// the learning rate with the steepest validation-loss drop. Diverging rates
/// are skipped; exact ties resolve toward the smaller rate.
pub fn lr_range_test(
    train_windows: &[SignalWindow],
    val_windows: &[SignalWindow],
    init_filters: &FilterBank,
    fista: &FistaConfig,
    base_cfg: &TrainConfig,
    lr_grid: &[f64],
) -> Result<f64> {
    if lr_grid.len() < 2 {
        return Err(config_err("learning-rate grid needs at least 2 points"));
    }
    let mut grid = lr_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite learning rates"));

    let mut best: Option<(f64, f64)> = None; // (lr, drop)
    for &lr in &grid {
        let cfg = TrainConfig {
            learning_rate: lr,
            max_epochs: 1,
            patience: 1,
            ..base_cfg.clone()
        };
        let outcome = train(train_windows, val_windows, init_filters, fista, &cfg, None);
        let drop = match outcome {
            Ok(report) => {
                let after = report.epochs[0].val_loss;
                let d = report.initial_val_loss - after;
                if d.is_finite() {
                    d
                } else {
                    continue;
                }
            }
            Err(
                CrsaeError::TrainingDiverged { .. }
                | CrsaeError::EncoderDiverged { .. }
                | CrsaeError::GradientNonFinite { .. },
            ) => continue,
            Err(other) => return Err(other),
        };
        if best.as_ref().map_or(true, |&(_, bd)| drop > bd) {
            best = Some((lr, drop));
        }
    }
    best.map(|(lr, _)| lr)
        .ok_or_else(|| config_err("every learning rate in the grid diverged"))
}

/// Rotates each true filter by a random in-plane angle so its recovery error
/// lands inside `err_range`, then returns the unit-norm perturbed bank.
/// With range [0, 0] this is just the normalized truth.
pub fn init_perturbed_dictionary<R: Rng>(
    true_filters: &FilterBank,
    err_range: (f64, f64),
    rng: &mut R,
) -> Result<FilterBank> {
    let (lo, hi) = err_range;
    if !(0.0 <= lo && lo <= hi && hi < 1.0) {
        return Err(config_err(format!(
            "error range [{lo}, {hi}] must satisfy 0 <= lo <= hi < 1"
        )));
    }
    let k = true_filters.filter_len();
    let mut rows = Vec::with_capacity(true_filters.filter_count());
    for c in 0..true_filters.filter_count() {
        let mut unit = true_filters.filter(c).to_vec();
        let norm = crate::conv_ops::l2_norm(&unit);
        if norm == 0.0 {
            return Err(config_err(format!("true filter {c} is zero")));
        }
        normalize(&mut unit);
        let target = if lo == hi { lo } else { rng.gen_range(lo..hi) };
        if target == 0.0 {
            rows.push(unit);
            continue;
        }
        // Orthogonal random direction, then rotate by angle asin(target):
        // err = sin(angle) exactly (up to rounding).
        let dir = loop {
            let g: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let proj: f64 = g.iter().zip(&unit).map(|(a, b)| a * b).sum();
            let mut d: Vec<f64> = g.iter().zip(&unit).map(|(gi, ui)| gi - proj * ui).collect();
            let n = crate::conv_ops::l2_norm(&d);
            if n > 1e-9 {
                normalize(&mut d);
                break d;
            }
        };
        let cos = (1.0 - target * target).sqrt();
        let row: Vec<f64> = unit
            .iter()
            .zip(&dir)
            .map(|(u, d)| cos * u + target * d)
            .collect();
        rows.push(row);
    }
    FilterBank::from_rows(&rows)
}

/// Residual-based σ̂ for the λ rule: mean over windows of the noise scale of
/// y − H x under `convention`, with codes from the ground truth and filters
/// from the initial dictionary (so the estimate includes dictionary error).
pub fn residual_noise_estimate(
    windows: &[SignalWindow],
    codes: &[CodeMatrix],
    init_filters: &FilterBank,
    convention: NoiseConvention,
) -> Result<f64> {
    if windows.is_empty() || windows.len() != codes.len() {
        return Err(CrsaeError::ShapeMismatch(format!(
            "{} windows vs {} code matrices",
            windows.len(),
            codes.len()
        )));
    }
    let mut sum = 0.0;
    for (win, code) in windows.iter().zip(codes) {
        let model = decode(init_filters, code)?;
        let residual: Vec<f64> = win.samples().iter().zip(&model).map(|(a, b)| a - b).collect();
        sum += noise_std_estimate(&residual, convention)?;
    }
    Ok(sum / windows.len() as f64)
}
