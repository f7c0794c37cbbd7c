//! Unconstrained baseline auto-encoder: a 3-iteration ISTA encoder with its
//! own filter bank, a separately parameterized linear decoder, and a
//! trainable scalar λ. Unlike the tied architecture, nothing couples the
//! encoder to the decoder and no norm constraint is applied, so it can fit
//! reconstructions without recovering the generating dictionary.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conv_ops::{apply_adjoint, lag_correlate_into, CodeMatrix, FilterBank, SignalWindow};
use crate::encoder::{decode, ista_encode, reconstruction_loss, EncoderTrace, FistaConfig};
use crate::error::{config_err, CrsaeError, Result};
use crate::gradient::{backprop_encoder_gradient, FilterGradient};
use crate::trainer::{AdamState, EpochRecord, TrainConfig, TrainReport};

/// Floor keeping the shrinkage threshold positive while λ trains.
const MIN_LAMBDA: f64 = 1e-9;

/// The baseline's three parameter groups.
#[derive(Debug, Clone)]
pub struct LcscParams {
    pub encoder: FilterBank,
    pub decoder: FilterBank,
    pub lambda: f64,
}

/// Architecture settings for the baseline.
#[derive(Debug, Clone, Copy)]
pub struct LcscConfig {
    /// Encoder depth; 3 for the standard baseline.
    pub ista_iterations: usize,
    /// Step constant of the encoder (fixed; not trained).
    pub lipschitz: f64,
    pub train_lambda: bool,
    /// Learning rate for λ; falls back to the filter learning rate. λ lives
    /// on a much larger scale than filter entries, so it usually needs one.
    pub lambda_lr: Option<f64>,
}

impl LcscConfig {
    fn validate(&self) -> Result<()> {
        if self.ista_iterations == 0 {
            return Err(config_err("encoder needs at least one iteration"));
        }
        if !(self.lipschitz > 0.0) {
            return Err(config_err("step constant must be > 0"));
        }
        Ok(())
    }

    fn encoder_cfg(&self, lambda: f64) -> FistaConfig {
        FistaConfig {
            lambda: lambda.max(MIN_LAMBDA),
            lipschitz: self.lipschitz,
            iterations: self.ista_iterations,
        }
    }
}

/// Encoder (ISTA with the encoder bank) then decoder (decoder bank).
/// Returns the code, optionally its trace, the reconstruction, and the loss.
pub fn lcsc_forward(
    params: &LcscParams,
    cfg: &LcscConfig,
    y: &SignalWindow,
    record: bool,
) -> Result<(CodeMatrix, Option<EncoderTrace>, Vec<f64>, f64)> {
    cfg.validate()?;
    let enc_cfg = cfg.encoder_cfg(params.lambda);
    let (code, trace) = ista_encode(y, &params.encoder, &enc_cfg, record)?;
    let y_hat = decode(&params.decoder, &code)?;
    let loss = reconstruction_loss(y.samples(), &y_hat)?;
    Ok((code, trace, y_hat, loss))
}

/// Per-window gradients for all three parameter groups.
#[derive(Debug, Clone)]
pub struct LcscGradient {
    pub encoder: FilterGradient,
    pub decoder: FilterGradient,
    pub lambda: f64,
    pub loss: f64,
}

impl LcscGradient {
    fn zeros(filter_count: usize, filter_len: usize) -> Self {
        Self {
            encoder: FilterGradient::zeros(filter_count, filter_len),
            decoder: FilterGradient::zeros(filter_count, filter_len),
            lambda: 0.0,
            loss: 0.0,
        }
    }

    fn add_assign(&mut self, other: &LcscGradient) {
        self.encoder.add_assign(&other.encoder);
        self.decoder.add_assign(&other.decoder);
        self.lambda += other.lambda;
        self.loss += other.loss;
    }
}

/// One window's gradient: the decoder term correlates δŷ with the code; the
/// encoder term replays the recorded ISTA trace (the momentum-free case of
/// the shared replay machinery), entered through the decoder's adjoint.
pub fn lcsc_window_gradient(
    params: &LcscParams,
    cfg: &LcscConfig,
    y: &SignalWindow,
) -> Result<LcscGradient> {
    let (code, trace, y_hat, loss) = lcsc_forward(params, cfg, y, true)?;
    let trace = trace.expect("trace requested");
    let k = params.decoder.filter_len();

    let delta_y_hat: Vec<f64> = y_hat.iter().zip(y.samples()).map(|(a, b)| a - b).collect();
    let mut decoder_grad = FilterGradient::zeros(params.decoder.filter_count(), k);
    lag_correlate_into(&code, &delta_y_hat, k, 1.0, decoder_grad.as_mut_slice());

    let delta_code = apply_adjoint(&params.decoder, &delta_y_hat)?;
    let enc_cfg = cfg.encoder_cfg(params.lambda);
    let (encoder_grad, lambda_grad) =
        backprop_encoder_gradient(&params.encoder, &enc_cfg, &trace, &delta_code)?;

    Ok(LcscGradient {
        encoder: encoder_grad,
        decoder: decoder_grad,
        lambda: lambda_grad,
        loss,
    })
}

fn lcsc_batch_gradient(
    windows: &[SignalWindow],
    params: &LcscParams,
    cfg: &LcscConfig,
) -> Result<(LcscGradient, f64)> {
    if windows.is_empty() {
        return Err(CrsaeError::EmptyInput("baseline gradient batch".into()));
    }
    let per_window: Vec<Result<LcscGradient>> = windows
        .par_iter()
        .map(|y| lcsc_window_gradient(params, cfg, y))
        .collect();
    let mut total = LcscGradient::zeros(params.encoder.filter_count(), params.encoder.filter_len());
    for item in per_window {
        total.add_assign(&item?);
    }
    let mean_loss = total.loss / windows.len() as f64;
    Ok((total, mean_loss))
}

fn lcsc_validation_loss(
    windows: &[SignalWindow],
    params: &LcscParams,
    cfg: &LcscConfig,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = windows
        .par_iter()
        .map(|y| lcsc_forward(params, cfg, y, false).map(|(_, _, _, l)| l))
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / windows.len() as f64)
}

/// Training outcome; `report.filters` holds the decoder bank from the best
/// epoch (the baseline's dictionary estimate), `params` the full best state.
#[derive(Debug, Clone)]
pub struct LcscReport {
    pub report: TrainReport,
    pub params: LcscParams,
}

/// ADAM training of encoder filters, decoder filters, and (optionally) λ.
/// No projection anywhere: the baseline is deliberately unconstrained.
/// Recovery errors are computed against the decoder filters.
pub fn train_lcsc_baseline(
    train_windows: &[SignalWindow],
    val_windows: &[SignalWindow],
    init: &LcscParams,
    cfg: &LcscConfig,
    train_cfg: &TrainConfig,
    ground_truth: Option<&FilterBank>,
) -> Result<LcscReport> {
    cfg.validate()?;
    train_cfg.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(CrsaeError::EmptyInput("training or validation windows".into()));
    }
    let (fc, fl) = (init.encoder.filter_count(), init.encoder.filter_len());
    if init.decoder.filter_count() != fc || init.decoder.filter_len() != fl {
        return Err(CrsaeError::ShapeMismatch(
            "encoder and decoder banks must share a shape".into(),
        ));
    }

    let mut params = init.clone();
    params.lambda = params.lambda.max(MIN_LAMBDA);
    let mut adam_enc = AdamState::new(fc * fl, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps);
    let mut adam_dec = adam_enc.clone();
    let mut adam_lambda = AdamState::new(1, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps);
    let lambda_lr = cfg.lambda_lr.unwrap_or(train_cfg.learning_rate);

    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    let initial_val_loss = lcsc_validation_loss(val_windows, &params, cfg)?;

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best_epoch = 0usize;
    let mut best_val_loss = f64::INFINITY;
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..train_windows.len()).collect();

    for epoch in 1..=train_cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch: Vec<SignalWindow> =
                chunk.iter().map(|&i| train_windows[i].clone()).collect();
            let (grad, mean_loss) = lcsc_batch_gradient(&batch, &params, cfg)?;
            if !mean_loss.is_finite() {
                return Err(CrsaeError::TrainingDiverged { epoch, batch: batch_index });
            }
            loss_sum += mean_loss * batch.len() as f64;

            let (next_enc, delta_enc) = adam_enc.step_slice(grad.encoder.as_slice(), train_cfg.learning_rate)?;
            adam_enc = next_enc;
            params.encoder = params.encoder.add_flat(&delta_enc)?;
            let (next_dec, delta_dec) = adam_dec.step_slice(grad.decoder.as_slice(), train_cfg.learning_rate)?;
            adam_dec = next_dec;
            params.decoder = params.decoder.add_flat(&delta_dec)?;
            if cfg.train_lambda {
                let (next_l, delta_l) = adam_lambda.step_slice(&[grad.lambda], lambda_lr)?;
                adam_lambda = next_l;
                params.lambda = (params.lambda + delta_l[0]).max(MIN_LAMBDA);
            }
        }
        let train_loss = loss_sum / train_windows.len() as f64;
        let val_loss = lcsc_validation_loss(val_windows, &params, cfg)?;
        if !val_loss.is_finite() {
            return Err(CrsaeError::TrainingDiverged { epoch, batch: 0 });
        }
        let recovery_errs = match ground_truth {
            Some(gt) => Some(
                crate::metrics::match_filters(gt, &params.decoder, 0)?
                    .matches
                    .iter()
                    .map(|m| m.raw_err)
                    .collect(),
            ),
            None => None,
        };
        epochs.push(EpochRecord { epoch, train_loss, val_loss, recovery_errs });
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best_epoch = epoch;
            best_params = params.clone();
        }
        if epoch - best_epoch >= train_cfg.patience {
            break;
        }
    }

    Ok(LcscReport {
        report: TrainReport {
            epochs,
            initial_val_loss,
            best_epoch,
            best_val_loss,
            filters: best_params.decoder.clone(),
            lambda: init.lambda,
            lipschitz: cfg.lipschitz,
        },
        params: best_params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv_ops::{apply_dictionary, estimate_lipschitz};
    use crate::gradient::backprop_filter_gradient;
    use rand::{Rng, SeedableRng};

    fn problem() -> (FilterBank, Vec<SignalWindow>) {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let truth = crate::simulator::make_filter_bank(2, 8, (-1.0, 1.0), &mut rng).unwrap();
        let mut windows = Vec::new();
        for idx in 0..4 {
            let mut code = CodeMatrix::zeros(2, 25);
            for c in 0..2 {
                let pos = rng.gen_range(0..25);
                code.channel_mut(c)[pos] = rng.gen_range(4.0..9.0);
            }
            let clean = apply_dictionary(&truth, &code).unwrap();
            let noisy: Vec<f64> = clean.iter().map(|v| v + rng.gen_range(-0.02..0.02)).collect();
            windows.push(SignalWindow::new(noisy, idx).unwrap());
        }
        (truth, windows)
    }

    #[test]
    fn tied_baseline_reduces_to_ista_encoder() {
        let (truth, windows) = problem();
        let lipschitz = estimate_lipschitz(&truth, 32, 500, 1e-9).unwrap().value;
        let lambda = 0.3;
        let params = LcscParams { encoder: truth.clone(), decoder: truth.clone(), lambda };
        let cfg = LcscConfig { ista_iterations: 3, lipschitz, train_lambda: false, lambda_lr: None };

        for y in &windows {
            let (code, _, y_hat, loss) = lcsc_forward(&params, &cfg, y, false).unwrap();
            let enc_cfg = FistaConfig { lambda: lambda.max(MIN_LAMBDA), lipschitz, iterations: 3 };
            let (expected_code, _) = ista_encode(y, &truth, &enc_cfg, false).unwrap();
            assert_eq!(code.as_slice(), expected_code.as_slice());
            let expected_hat = decode(&truth, &expected_code).unwrap();
            assert!(y_hat.iter().zip(&expected_hat).all(|(a, b)| a.to_bits() == b.to_bits()));

            // With tied banks, encoder + decoder gradients add up to the
            // tied-architecture gradient on the same (momentum-free) trace.
            let grad = lcsc_window_gradient(&params, &cfg, y).unwrap();
            let (_, trace) = ista_encode(y, &truth, &enc_cfg, true).unwrap();
            let tied =
                backprop_filter_gradient(y, &truth, &enc_cfg, &trace.unwrap(), &y_hat).unwrap();
            for i in 0..tied.as_slice().len() {
                let sum = grad.encoder.as_slice()[i] + grad.decoder.as_slice()[i];
                let t = tied.as_slice()[i];
                assert!(
                    (sum - t).abs() <= 1e-12 * t.abs().max(1.0),
                    "entry {i}: {sum} vs {t}"
                );
            }
            let _ = loss;
        }
    }

    #[test]
    fn lambda_gradient_matches_finite_differences() {
        let (truth, windows) = problem();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let lipschitz = estimate_lipschitz(&truth, 32, 500, 1e-9).unwrap().value;
        let encoder = crate::trainer::init_perturbed_dictionary(&truth, (0.2, 0.3), &mut rng).unwrap();
        let decoder = crate::trainer::init_perturbed_dictionary(&truth, (0.2, 0.3), &mut rng).unwrap();
        let params = LcscParams { encoder, decoder, lambda: 0.4 };
        let cfg = LcscConfig { ista_iterations: 3, lipschitz, train_lambda: true, lambda_lr: None };

        let y = &windows[0];
        let analytic = lcsc_window_gradient(&params, &cfg, y).unwrap().lambda;
        let step = 1e-6;
        let mut bumped = params.clone();
        bumped.lambda = params.lambda + step;
        let (_, _, _, loss_plus) = lcsc_forward(&bumped, &cfg, y, false).unwrap();
        bumped.lambda = params.lambda - step;
        let (_, _, _, loss_minus) = lcsc_forward(&bumped, &cfg, y, false).unwrap();
        let fd = (loss_plus - loss_minus) / (2.0 * step);
        let rel = (analytic - fd).abs() / fd.abs().max(1e-8);
        assert!(rel <= 1e-5, "analytic {analytic} vs fd {fd} (rel {rel})");
    }

    #[test]
    fn baseline_training_is_reproducible() {
        let (truth, mut windows) = problem();
        let val = windows.split_off(2);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let lipschitz = estimate_lipschitz(&truth, 32, 500, 1e-9).unwrap().value;
        let init_bank = crate::trainer::init_perturbed_dictionary(&truth, (0.4, 0.5), &mut rng).unwrap();
        let init = LcscParams { encoder: init_bank.clone(), decoder: init_bank, lambda: 0.5 };
        let cfg = LcscConfig { ista_iterations: 3, lipschitz, train_lambda: true, lambda_lr: Some(0.05) };
        let tc = TrainConfig {
            batch_size: 2,
            learning_rate: 0.02,
            max_epochs: 3,
            patience: 3,
            lambda_policy: None,
            lambda_decay: None,
            seed: 5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            recompute_lipschitz: false,
        };
        let a = train_lcsc_baseline(&windows, &val, &init, &cfg, &tc, Some(&truth)).unwrap();
        let b = train_lcsc_baseline(&windows, &val, &init, &cfg, &tc, Some(&truth)).unwrap();
        assert_eq!(a.params.decoder.as_slice(), b.params.decoder.as_slice());
        assert_eq!(a.params.lambda, b.params.lambda);
        assert_eq!(a.report.best_val_loss.to_bits(), b.report.best_val_loss.to_bits());
        // λ was actually trained.
        assert_ne!(a.params.lambda, init.lambda);
    }
}
