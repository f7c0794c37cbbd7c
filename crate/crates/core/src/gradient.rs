//! Reverse-mode differentiation of the reconstruction loss with respect to
//! the shared filters, replayed over a recorded [`EncoderTrace`], plus the
//! central-difference oracle used to validate it.
//!
//! Writing M = I − (1/L)HᵀH and γ_t = (s_{t-1}−1)/s_t, the replay is
//!
//! ```text
//! δŷ = ŷ − y
//! δh += corr_lags(z1_T, δŷ)                    (decoder)
//! δz1_T = Hᵀ δŷ,   δz2_T = 0
//! for t = T..1:
//!     δc_t = mask(c_t) ⊙ δz1_t                 (mask = 1 where |c| > λ/L)
//!     δh  += (1/L)[corr_lags(δc_t, y − H w_t) − corr_lags(w_t, H δc_t)]
//!     δz1_{t-1} = (1 + γ_t) M δc_t + δz2_t
//!     δz2_{t-1} = −γ_t M δc_t
//! ```
//!
//! where corr_lags(x, v)[c][k] = Σ_n x[c][n]·v[n+k]. The δz2 carry-over term
//! is the gradient of the state copy z2_t = z1_{t-1}; dropping it loses the
//! second momentum branch, which the finite-difference oracle flags
//! immediately. Every Jacobian–vector product above is one of the two
//! convolution operators or a lag correlation.

use rayon::prelude::*;

use crate::conv_ops::{
    apply_adjoint, apply_dictionary, lag_correlate_into, CodeMatrix, FilterBank, SignalWindow,
};
use crate::encoder::{decode, fista_encode, reconstruction_loss, EncoderTrace, FistaConfig};
use crate::error::{config_err, shape_err, CrsaeError, Result};

/// Gradient of the loss with respect to every filter entry; C×K row-major,
/// aligned with [`FilterBank`].
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGradient {
    data: Vec<f64>,
    filter_count: usize,
    filter_len: usize,
}

impl FilterGradient {
    pub fn zeros(filter_count: usize, filter_len: usize) -> Self {
        Self {
            data: vec![0.0; filter_count * filter_len],
            filter_count,
            filter_len,
        }
    }

    pub fn filter_count(&self) -> usize {
        self.filter_count
    }

    pub fn filter_len(&self) -> usize {
        self.filter_len
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.data[c * self.filter_len..(c + 1) * self.filter_len]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &FilterGradient) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Subgradient mask of the soft threshold: 1 where |c| > eps, else 0 (the
/// kink |c| = eps takes 0).
pub fn shrink_derivative(c: &CodeMatrix, eps: f64) -> Result<CodeMatrix> {
    if !(eps >= 0.0) {
        return Err(config_err(format!("threshold must be >= 0, got {eps}")));
    }
    let mut mask = CodeMatrix::zeros(c.channels(), c.positions());
    for (m, &v) in mask.as_mut_slice().iter_mut().zip(c.as_slice()) {
        *m = if v.abs() > eps { 1.0 } else { 0.0 };
    }
    Ok(mask)
}

/// Gradient of ½‖y − ŷ‖² with respect to the filter bank shared by encoder
/// and decoder, replayed from the recorded trace.
pub fn backprop_filter_gradient(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
    trace: &EncoderTrace,
    y_hat: &[f64],
) -> Result<FilterGradient> {
    check_trace(filters, cfg, trace, y)?;
    if y_hat.len() != y.len() {
        return Err(shape_err(format!(
            "reconstruction has {} samples, window has {}",
            y_hat.len(),
            y.len()
        )));
    }
    let k = filters.filter_len();
    let mut grad = FilterGradient::zeros(filters.filter_count(), k);

    let delta_y_hat: Vec<f64> = y_hat.iter().zip(y.samples()).map(|(a, b)| a - b).collect();
    // Decoder term: ŷ = H z1_T, so δh accumulates the correlation of δŷ
    // with the final code.
    lag_correlate_into(trace.final_code(), &delta_y_hat, k, 1.0, grad.as_mut_slice());
    let delta_code = apply_adjoint(filters, &delta_y_hat)?;

    let (encoder_grad, _) = backprop_encoder_gradient(filters, cfg, trace, &delta_code)?;
    grad.add_assign(&encoder_grad);
    Ok(grad)
}

/// Encoder-only replay: given δ𝓛/δz1_T, walks the T iterations backwards and
/// returns the filter gradient together with the gradient of λ through every
/// shrinkage. Used directly by the tied architecture (after adding the
/// decoder term) and by baselines whose decoder holds separate filters.
pub fn backprop_encoder_gradient(
    filters: &FilterBank,
    cfg: &FistaConfig,
    trace: &EncoderTrace,
    delta_final_code: &CodeMatrix,
) -> Result<(FilterGradient, f64)> {
    let k = filters.filter_len();
    let channels = filters.filter_count();
    let ne = delta_final_code.positions();
    if delta_final_code.channels() != channels || trace.final_code().positions() != ne {
        return Err(shape_err(
            "sensitivity shape does not match the recorded trace".to_string(),
        ));
    }
    let inv_l = 1.0 / cfg.lipschitz;
    let threshold = cfg.threshold();

    let mut grad = FilterGradient::zeros(channels, k);
    let mut delta_lambda = 0.0;
    let mut delta_z1 = delta_final_code.clone();
    let mut delta_z2 = CodeMatrix::zeros(channels, ne);

    for t in (1..=trace.iterations()).rev() {
        let c_t = trace.pre_shrink(t);
        // δc_t = mask ⊙ δz1_t; fold the λ-path of the shrinkage in the same
        // sweep: ∂z1/∂λ = −(1/L)·sgn(c) on the active set.
        let mut delta_c = CodeMatrix::zeros(channels, ne);
        for ((d, &dz), &cv) in delta_c
            .as_mut_slice()
            .iter_mut()
            .zip(delta_z1.as_slice())
            .zip(c_t.as_slice())
        {
            if cv.abs() > threshold {
                *d = dz;
                delta_lambda -= inv_l * dz * cv.signum();
            }
        }
        if !delta_c.max_abs().is_finite() {
            return Err(CrsaeError::GradientNonFinite { iteration: t });
        }

        let w_t = trace.extrapolated(t);
        // ∂c_t/∂h holding w_t fixed: +(1/L)·corr(δc, y − H w_t) from the data
        // term, −(1/L)·corr(w_t, H δc) from differentiating HᵀH w_t.
        lag_correlate_into(&delta_c, trace.residual(t), k, inv_l, grad.as_mut_slice());
        let image = apply_dictionary(filters, &delta_c)?;
        lag_correlate_into(w_t, &image, k, -inv_l, grad.as_mut_slice());

        // M δc_t = δc_t − (1/L)Hᵀ(H δc_t), then split across the two state
        // branches; δz2_t carries the copy z2_t = z1_{t-1} back one step.
        let pulled = apply_adjoint(filters, &image)?;
        let gamma = trace.gamma(t);
        let mut next_z1 = CodeMatrix::zeros(channels, ne);
        let mut next_z2 = CodeMatrix::zeros(channels, ne);
        for i in 0..channels * ne {
            let m = delta_c.as_slice()[i] - inv_l * pulled.as_slice()[i];
            next_z1.as_mut_slice()[i] = (1.0 + gamma) * m + delta_z2.as_slice()[i];
            next_z2.as_mut_slice()[i] = -gamma * m;
        }
        delta_z1 = next_z1;
        delta_z2 = next_z2;
    }

    if !grad.is_finite() || !delta_lambda.is_finite() {
        return Err(CrsaeError::GradientNonFinite { iteration: 0 });
    }
    Ok((grad, delta_lambda))
}

fn check_trace(
    filters: &FilterBank,
    cfg: &FistaConfig,
    trace: &EncoderTrace,
    y: &SignalWindow,
) -> Result<()> {
    cfg.validate()?;
    if trace.iterations() != cfg.iterations {
        return Err(config_err(format!(
            "trace holds {} iterations, config expects {}",
            trace.iterations(),
            cfg.iterations
        )));
    }
    if trace.lambda() != cfg.lambda || trace.lipschitz() != cfg.lipschitz {
        return Err(config_err(
            "trace was recorded under different lambda or step constant".to_string(),
        ));
    }
    let code = trace.final_code();
    if code.channels() != filters.filter_count() {
        return Err(shape_err(format!(
            "trace has {} channels, filter bank has {}",
            code.channels(),
            filters.filter_count()
        )));
    }
    let expected_ne = y.len() + 1 - filters.filter_len();
    if code.positions() != expected_ne {
        return Err(shape_err(format!(
            "trace codes have {} positions, window implies {}",
            code.positions(),
            expected_ne
        )));
    }
    Ok(())
}

/// Central finite differences of the full forward pass; the ground-truth
/// oracle for the replay above. Each entry costs two fresh encodings.
pub fn finite_difference_gradient(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
    step: f64,
) -> Result<FilterGradient> {
    if !(step > 0.0) {
        return Err(config_err(format!("step must be > 0, got {step}")));
    }
    let n = filters.filter_count() * filters.filter_len();
    let mut grad = FilterGradient::zeros(filters.filter_count(), filters.filter_len());
    for idx in 0..n {
        let mut loss = [0.0; 2];
        for (side, sign) in [(0usize, 1.0), (1usize, -1.0)] {
            let mut data = filters.as_slice().to_vec();
            data[idx] += sign * step;
            let bumped = FilterBank::from_flat(filters.filter_count(), filters.filter_len(), data)?;
            let (code, _) = fista_encode(y, &bumped, cfg, false)?;
            let y_hat = decode(&bumped, &code)?;
            loss[side] = reconstruction_loss(y.samples(), &y_hat)?;
        }
        grad.as_mut_slice()[idx] = (loss[0] - loss[1]) / (2.0 * step);
    }
    Ok(grad)
}

/// One window's contribution: forward with trace, decode, loss, replay.
pub fn window_gradient(
    y: &SignalWindow,
    filters: &FilterBank,
    cfg: &FistaConfig,
) -> Result<(FilterGradient, f64)> {
    let (code, trace) = fista_encode(y, filters, cfg, true)?;
    let trace = trace.expect("trace requested");
    let y_hat = decode(filters, &code)?;
    let loss = reconstruction_loss(y.samples(), &y_hat)?;
    let grad = backprop_filter_gradient(y, filters, cfg, &trace, &y_hat)?;
    Ok((grad, loss))
}

/// Sum of per-window gradients and the mean loss over the batch. Windows are
/// processed in parallel; the reduction folds in ascending window order so
/// results are bit-reproducible.
pub fn batch_gradient(
    windows: &[SignalWindow],
    filters: &FilterBank,
    cfg: &FistaConfig,
) -> Result<(FilterGradient, f64)> {
    if windows.is_empty() {
        return Err(CrsaeError::EmptyInput("gradient batch".into()));
    }
    let per_window: Vec<Result<(FilterGradient, f64)>> = windows
        .par_iter()
        .map(|y| window_gradient(y, filters, cfg))
        .collect();

    let mut total = FilterGradient::zeros(filters.filter_count(), filters.filter_len());
    let mut loss_sum = 0.0;
    for item in per_window {
        let (grad, loss) = item?;
        total.add_assign(&grad);
        loss_sum += loss;
    }
    Ok((total, loss_sum / windows.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv_ops::apply_adjoint;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filters_2x4() -> FilterBank {
        FilterBank::from_rows(&[vec![0.6, -0.3, 0.1, 0.2], vec![-0.2, 0.8, 0.4, -0.1]]).unwrap()
    }

    fn window(rng: &mut ChaCha8Rng, len: usize) -> SignalWindow {
        SignalWindow::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0).unwrap()
    }

    #[test]
    fn mask_hand_values() {
        let c = CodeMatrix::from_flat(1, 3, vec![1.0, -0.3, 0.5]).unwrap();
        let mask = shrink_derivative(&c, 0.5).unwrap();
        assert_eq!(mask.as_slice(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn mask_at_zero_eps_marks_nonzeros() {
        let c = CodeMatrix::from_flat(1, 4, vec![0.2, 0.0, -1.5, 0.0]).unwrap();
        let mask = shrink_derivative(&c, 0.0).unwrap();
        assert_eq!(mask.as_slice(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn mask_matches_finite_difference_of_shrink() {
        use crate::encoder::shrink;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let step = 1e-7;
        let eps = 0.4;
        let vals: Vec<f64> = (0..128)
            .map(|_| rng.gen_range(-2.0..2.0))
            .filter(|v: &f64| (v.abs() - eps).abs() > 10.0 * step)
            .collect();
        let n = vals.len();
        let c = CodeMatrix::from_flat(1, n, vals.clone()).unwrap();
        let mask = shrink_derivative(&c, eps).unwrap();
        let plus = shrink(
            &CodeMatrix::from_flat(1, n, vals.iter().map(|v| v + step).collect()).unwrap(),
            eps,
        )
        .unwrap();
        let minus = shrink(
            &CodeMatrix::from_flat(1, n, vals.iter().map(|v| v - step).collect()).unwrap(),
            eps,
        )
        .unwrap();
        for i in 0..n {
            let fd = (plus.as_slice()[i] - minus.as_slice()[i]) / (2.0 * step);
            assert!(
                (fd - mask.as_slice()[i]).abs() < 1e-6,
                "entry {i}: fd {fd} vs mask {}",
                mask.as_slice()[i]
            );
        }
    }

    #[test]
    fn dead_code_gives_exactly_zero_gradient() {
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let y = window(&mut rng, 20);
        let pulled = apply_adjoint(&filters, y.samples()).unwrap();
        let cfg = FistaConfig {
            lambda: pulled.max_abs() * 10.0,
            lipschitz: 5.0,
            iterations: 1,
        };
        let (code, trace) = fista_encode(&y, &filters, &cfg, true).unwrap();
        assert_eq!(code.support_size(), 0);
        let y_hat = decode(&filters, &code).unwrap();
        let grad = backprop_filter_gradient(&y, &filters, &cfg, &trace.unwrap(), &y_hat).unwrap();
        assert!(grad.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn fd_is_zero_in_constant_loss_region() {
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let y = window(&mut rng, 20);
        let pulled = apply_adjoint(&filters, y.samples()).unwrap();
        let cfg = FistaConfig {
            lambda: pulled.max_abs() * 50.0,
            lipschitz: 5.0,
            iterations: 2,
        };
        let fd = finite_difference_gradient(&y, &filters, &cfg, 1e-6).unwrap();
        assert!(fd.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backprop_matches_fd_on_small_instance() {
        let filters = FilterBank::from_rows(&[vec![0.5, -0.4, 0.3]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let y = window(&mut rng, 12);
        let cfg = FistaConfig { lambda: 0.15, lipschitz: 2.0, iterations: 3 };
        let (code, trace) = fista_encode(&y, &filters, &cfg, true).unwrap();
        let y_hat = decode(&filters, &code).unwrap();
        let bp = backprop_filter_gradient(&y, &filters, &cfg, &trace.unwrap(), &y_hat).unwrap();
        let fd = finite_difference_gradient(&y, &filters, &cfg, 1e-6).unwrap();
        for (b, f) in bp.as_slice().iter().zip(fd.as_slice()) {
            let rel = (b - f).abs() / f.abs().max(1e-8);
            assert!(rel <= 1e-5, "bp {b} vs fd {f} (rel {rel})");
        }
    }

    #[test]
    fn batch_matches_ordered_sum_of_windows() {
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = FistaConfig { lambda: 0.2, lipschitz: 6.0, iterations: 8 };
        let windows: Vec<SignalWindow> = (0..4).map(|_| window(&mut rng, 24)).collect();

        let (batch, mean_loss) = batch_gradient(&windows, &filters, &cfg).unwrap();
        let mut manual = FilterGradient::zeros(2, 4);
        let mut loss_sum = 0.0;
        for w in &windows {
            let (g, l) = window_gradient(w, &filters, &cfg).unwrap();
            manual.add_assign(&g);
            loss_sum += l;
        }
        assert_eq!(batch.as_slice(), manual.as_slice());
        assert_eq!(mean_loss, loss_sum / 4.0);

        // Single-window batch equals the window gradient.
        let (one, _) = batch_gradient(&windows[..1], &filters, &cfg).unwrap();
        let (single, _) = window_gradient(&windows[0], &filters, &cfg).unwrap();
        assert_eq!(one.as_slice(), single.as_slice());

        // The same window twice doubles exactly under ordered summation.
        let twice = vec![windows[1].clone(), windows[1].clone()];
        let (doubled, _) = batch_gradient(&twice, &filters, &cfg).unwrap();
        let (base, _) = window_gradient(&windows[1], &filters, &cfg).unwrap();
        for (d, b) in doubled.as_slice().iter().zip(base.as_slice()) {
            assert_eq!(d.to_bits(), (2.0 * b).to_bits());
        }
    }

    #[test]
    fn gradients_are_bit_deterministic() {
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let cfg = FistaConfig { lambda: 0.2, lipschitz: 6.0, iterations: 10 };
        let windows: Vec<SignalWindow> = (0..6).map(|_| window(&mut rng, 32)).collect();
        let (a, la) = batch_gradient(&windows, &filters, &cfg).unwrap();
        let (b, lb) = batch_gradient(&windows, &filters, &cfg).unwrap();
        assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(la.to_bits(), lb.to_bits());
    }

    #[test]
    fn loss_path_scales_with_input_and_lambda() {
        // Doubling y and λ doubles every iterate, hence ŷ − y, bit for bit.
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let y = window(&mut rng, 24);
        let cfg = FistaConfig { lambda: 0.3, lipschitz: 6.0, iterations: 7 };
        let (code, _) = fista_encode(&y, &filters, &cfg, false).unwrap();
        let y_hat = decode(&filters, &code).unwrap();

        let y2 = SignalWindow::new(y.samples().iter().map(|v| 2.0 * v).collect(), 0).unwrap();
        let cfg2 = FistaConfig { lambda: 0.6, ..cfg };
        let (code2, _) = fista_encode(&y2, &filters, &cfg2, false).unwrap();
        let y_hat2 = decode(&filters, &code2).unwrap();

        for i in 0..y_hat.len() {
            let d = y_hat[i] - y.samples()[i];
            let d2 = y_hat2[i] - y2.samples()[i];
            assert_eq!(d2.to_bits(), (2.0 * d).to_bits(), "sample {i}");
        }
    }

    #[test]
    fn trace_config_mismatch_rejected() {
        let filters = filters_2x4();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let y = window(&mut rng, 20);
        let cfg = FistaConfig { lambda: 0.2, lipschitz: 6.0, iterations: 4 };
        let (code, trace) = fista_encode(&y, &filters, &cfg, true).unwrap();
        let trace = trace.unwrap();
        let y_hat = decode(&filters, &code).unwrap();

        let wrong_t = FistaConfig { iterations: 5, ..cfg };
        assert!(backprop_filter_gradient(&y, &filters, &wrong_t, &trace, &y_hat).is_err());
        let wrong_lambda = FistaConfig { lambda: 0.25, ..cfg };
        assert!(backprop_filter_gradient(&y, &filters, &wrong_lambda, &trace, &y_hat).is_err());
    }

    #[test]
    fn empty_batch_rejected() {
        let filters = filters_2x4();
        let cfg = FistaConfig { lambda: 0.2, lipschitz: 6.0, iterations: 2 };
        assert!(batch_gradient(&[], &filters, &cfg).is_err());
    }
}
