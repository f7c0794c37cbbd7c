//! Ground-truth data generation: continuous-time spike events, snap-to-grid
//! discretization, synthesis at a controlled noise level, and windowing.
//!
//! Events are a homogeneous Poisson stream per neuron, thinned two ways:
//! a dead time of one filter duration after each accepted event (refractory
//! behaviour, so a neuron's templates never overlap themselves), and a
//! support check that keeps each discretized event inside one window of the
//! recording. The second constraint is what makes `y_j = H x_j + v_j` hold
//! exactly for every emitted window and its stored code; windows are also
//! synthesized through the same dictionary operator used everywhere else, so
//! the identity is bitwise, not just to rounding.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::conv_ops::{apply_dictionary, CodeMatrix, FilterBank, SignalWindow};
use crate::error::{config_err, CrsaeError, Result};

/// Per-neuron amplitude distribution (mV): event sizes are i.i.d.
/// Normal(mean, std²).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmplitudeParams {
    pub mean: f64,
    pub std: f64,
}

/// Noise level: either the per-sample standard deviation directly, or a
/// target SNR from which sigma is back-computed against the clean signal.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    Sigma(f64),
    TargetSnrDb(f64),
}

/// Full description of one simulated recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Number of neurons C (one filter per neuron).
    pub neurons: usize,
    /// Filter length K in samples.
    pub filter_len: usize,
    /// Sampling rate in Hz.
    pub sample_rate_hz: f64,
    /// Recording duration T0 in seconds.
    pub duration_s: f64,
    /// Mean events per second for every neuron.
    pub firing_rate_hz: f64,
    /// Per-neuron amplitude distributions; length must equal `neurons`.
    pub amplitudes: Vec<AmplitudeParams>,
    pub noise: NoiseSpec,
    /// Window length W in samples.
    pub window_len: usize,
    /// Independent electrode realizations sharing one filter bank.
    pub electrodes: usize,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 {
            return Err(config_err("need at least one neuron"));
        }
        if self.filter_len == 0 {
            return Err(config_err("filter length must be >= 1"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(config_err("sample rate must be > 0"));
        }
        if !(self.duration_s > 0.0) {
            return Err(config_err("duration must be > 0"));
        }
        if !(self.firing_rate_hz >= 0.0) {
            return Err(config_err("firing rate must be >= 0"));
        }
        let dead = self.filter_len as f64 / self.sample_rate_hz;
        if self.firing_rate_hz * dead >= 1.0 {
            return Err(config_err(format!(
                "firing rate {} Hz saturates the refractory period of {dead} s",
                self.firing_rate_hz
            )));
        }
        if self.amplitudes.len() != self.neurons {
            return Err(config_err(format!(
                "{} amplitude entries for {} neurons",
                self.amplitudes.len(),
                self.neurons
            )));
        }
        if self.window_len <= self.filter_len {
            return Err(config_err("window length must exceed the filter length"));
        }
        if self.electrodes == 0 {
            return Err(config_err("need at least one electrode"));
        }
        if self.total_samples() < self.window_len {
            return Err(config_err("recording shorter than one window"));
        }
        match self.noise {
            NoiseSpec::Sigma(s) if !(s >= 0.0) => Err(config_err("sigma must be >= 0")),
            NoiseSpec::TargetSnrDb(db) if !db.is_finite() => {
                Err(config_err("target SNR must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Total samples N = floor(T0 · fs).
    pub fn total_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).floor() as usize
    }

    /// Code positions per window, N_e = W − K + 1.
    pub fn positions_per_window(&self) -> usize {
        self.window_len - self.filter_len + 1
    }
}

/// One discrete spike: continuous event time and amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpikeEvent {
    pub time_s: f64,
    pub amplitude: f64,
}

/// Ground-truth events per neuron over one recording.
#[derive(Debug, Clone)]
pub struct SpikeEventSet {
    per_neuron: Vec<Vec<SpikeEvent>>,
    horizon_s: f64,
}

impl SpikeEventSet {
    pub fn neuron(&self, c: usize) -> &[SpikeEvent] {
        &self.per_neuron[c]
    }

    pub fn neuron_count(&self) -> usize {
        self.per_neuron.len()
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_s
    }

    pub fn total_events(&self) -> usize {
        self.per_neuron.iter().map(Vec::len).sum()
    }

    /// Smallest same-neuron inter-event gap in seconds; infinity when no
    /// neuron has two events.
    pub fn min_gap_s(&self) -> f64 {
        let mut min = f64::INFINITY;
        for events in &self.per_neuron {
            for pair in events.windows(2) {
                min = min.min(pair[1].time_s - pair[0].time_s);
            }
        }
        min
    }
}

/// Draws one recording's events: per neuron, a Poisson stream at the
/// configured rate thinned by the refractory dead time K/fs and by the
/// window-support rule described in the module docs. Cross-neuron overlap is
/// unconstrained.
pub fn generate_events<R: Rng>(cfg: &SimConfig, rng: &mut R) -> Result<SpikeEventSet> {
    cfg.validate()?;
    let n_total = cfg.total_samples();
    let fs = cfg.sample_rate_hz;
    let dead_s = cfg.filter_len as f64 / fs;
    let mut per_neuron = Vec::with_capacity(cfg.neurons);

    for c in 0..cfg.neurons {
        let mut events = Vec::new();
        if cfg.firing_rate_hz > 0.0 {
            let gaps = Exp::new(cfg.firing_rate_hz)
                .map_err(|e| config_err(format!("firing rate: {e}")))?;
            let amp = &cfg.amplitudes[c];
            let amps = Normal::new(amp.mean, amp.std)
                .map_err(|e| config_err(format!("amplitude params: {e}")))?;
            let mut t = gaps.sample(rng);
            let mut last_accepted = f64::NEG_INFINITY;
            while t < cfg.duration_s {
                let sample = (t * fs).floor() as usize;
                if t - last_accepted >= dead_s
                    && event_fits(sample, cfg.filter_len, cfg.window_len, n_total)
                {
                    events.push(SpikeEvent {
                        time_s: t,
                        amplitude: amps.sample(rng),
                    });
                    last_accepted = t;
                }
                t += gaps.sample(rng);
            }
        }
        per_neuron.push(events);
    }
    Ok(SpikeEventSet {
        per_neuron,
        horizon_s: cfg.duration_s,
    })
}

/// An event starting at `sample` must fit inside its own window (or the
/// trailing remainder) and inside the horizon.
fn event_fits(sample: usize, filter_len: usize, window_len: usize, n_total: usize) -> bool {
    let segment_end = ((sample / window_len) + 1) * window_len;
    sample + filter_len <= segment_end.min(n_total)
}

/// Synthesized recording plus its ground truth.
#[derive(Debug, Clone)]
pub struct Synthesis {
    /// Noise-free signal, N samples.
    pub clean: Vec<f64>,
    /// clean + i.i.d. Gaussian noise.
    pub noisy: Vec<f64>,
    /// Exact sparse code of every full window, in window order.
    pub window_codes: Vec<CodeMatrix>,
    /// Noise standard deviation actually used.
    pub sigma: f64,
}

/// Snaps events to the sample grid (n = floor(τ·fs)), builds the per-window
/// codes, synthesizes clean = H x window by window, and adds Gaussian noise.
pub fn discretize_and_synthesize<R: Rng>(
    events: &SpikeEventSet,
    filters: &FilterBank,
    cfg: &SimConfig,
    rng: &mut R,
) -> Result<Synthesis> {
    cfg.validate()?;
    if filters.filter_count() != cfg.neurons || filters.filter_len() != cfg.filter_len {
        return Err(CrsaeError::ShapeMismatch(format!(
            "filter bank {}x{} does not match config {}x{}",
            filters.filter_count(),
            filters.filter_len(),
            cfg.neurons,
            cfg.filter_len
        )));
    }
    let n_total = cfg.total_samples();
    let w = cfg.window_len;
    let k = cfg.filter_len;
    let ne = cfg.positions_per_window();
    let fs = cfg.sample_rate_hz;
    let num_windows = n_total / w;
    let tail_start = num_windows * w;

    let mut window_codes = vec![CodeMatrix::zeros(cfg.neurons, ne); num_windows];
    let mut tail_events: Vec<(usize, usize, f64)> = Vec::new();
    for c in 0..events.neuron_count() {
        for ev in events.neuron(c) {
            if !(ev.time_s >= 0.0 && ev.time_s < events.horizon_s()) {
                return Err(config_err(format!(
                    "event at {} s lies outside the horizon [0, {})",
                    ev.time_s,
                    events.horizon_s()
                )));
            }
            let sample = (ev.time_s * fs).floor() as usize;
            if !event_fits(sample, k, w, n_total) {
                return Err(config_err(format!(
                    "event at sample {sample} straddles a window boundary or the horizon"
                )));
            }
            if sample < tail_start {
                let j = sample / w;
                window_codes[j].channel_mut(c)[sample - j * w] += ev.amplitude;
            } else {
                tail_events.push((c, sample, ev.amplitude));
            }
        }
    }

    // Window-by-window synthesis through the dictionary operator itself, so
    // stored codes reproduce the clean windows bit for bit.
    let mut clean = Vec::with_capacity(n_total);
    for code in &window_codes {
        clean.extend(apply_dictionary(filters, code)?);
    }
    let mut tail = vec![0.0; n_total - tail_start];
    for (c, sample, amplitude) in tail_events {
        let h = filters.filter(c);
        let offset = sample - tail_start;
        for (i, &hv) in h.iter().enumerate() {
            tail[offset + i] += amplitude * hv;
        }
    }
    clean.extend(tail);

    let sigma = match cfg.noise {
        NoiseSpec::Sigma(s) => s,
        NoiseSpec::TargetSnrDb(db) => {
            let power: f64 = clean.iter().map(|v| v * v).sum();
            if power == 0.0 {
                return Err(config_err(
                    "target SNR needs a nonzero clean signal; specify sigma instead",
                ));
            }
            (power / (n_total as f64 * 10f64.powf(db / 10.0))).sqrt()
        }
    };
    let noise_dist =
        Normal::new(0.0, sigma).map_err(|e| config_err(format!("noise sigma: {e}")))?;
    let noisy: Vec<f64> = clean.iter().map(|&v| v + noise_dist.sample(rng)).collect();

    Ok(Synthesis {
        clean,
        noisy,
        window_codes,
        sigma,
    })
}

/// Convenience wrapper: one electrode is one independent realization.
/// Electrode e draws from stream e+1 of the configured seed.
pub fn simulate_electrode(
    cfg: &SimConfig,
    filters: &FilterBank,
    electrode: usize,
) -> Result<(SpikeEventSet, Synthesis)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1 + electrode as u64);
    let events = generate_events(cfg, &mut rng)?;
    let synth = discretize_and_synthesize(&events, filters, cfg, &mut rng)?;
    Ok((events, synth))
}

/// Cuts the signal into non-overlapping windows of `window_len` samples,
/// dropping the remainder.
pub fn window_signal(signal: &[f64], window_len: usize) -> Result<Vec<SignalWindow>> {
    if window_len == 0 {
        return Err(config_err("window length must be >= 1"));
    }
    signal
        .chunks_exact(window_len)
        .enumerate()
        .map(|(j, chunk)| SignalWindow::new(chunk.to_vec(), j))
        .collect()
}

/// 10·log10(‖clean‖² / ‖noise‖²).
pub fn compute_snr(clean: &[f64], noise: &[f64]) -> Result<f64> {
    let p_noise: f64 = noise.iter().map(|v| v * v).sum();
    if p_noise == 0.0 {
        return Err(config_err("SNR undefined for exactly zero noise"));
    }
    let p_clean: f64 = clean.iter().map(|v| v * v).sum();
    Ok(10.0 * (p_clean / p_noise).log10())
}

/// Generates C unit-norm biphasic templates (a sharp trough followed by a
/// slower bump, Gaussian lobes with randomized centers, widths, and lobe
/// ratio) whose pairwise inner products all fall inside `correlation_range`,
/// by incremental rejection sampling.
pub fn make_filter_bank<R: Rng>(
    filter_count: usize,
    filter_len: usize,
    correlation_range: (f64, f64),
    rng: &mut R,
) -> Result<FilterBank> {
    let (lo, hi) = correlation_range;
    if filter_len < 4 {
        return Err(config_err("templates need K >= 4"));
    }
    if !(lo <= hi) || lo < -1.0 || hi > 1.0 {
        return Err(config_err(format!(
            "correlation range [{lo}, {hi}] is not a subrange of [-1, 1]"
        )));
    }
    if filter_count == 0 {
        return Err(config_err("need at least one filter"));
    }

    const ATTEMPT_BUDGET: usize = 50_000;
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(filter_count);
    let mut attempts = 0;
    let mut achieved = (f64::INFINITY, f64::NEG_INFINITY);
    while accepted.len() < filter_count {
        if attempts >= ATTEMPT_BUDGET {
            return Err(CrsaeError::CorrelationRangeUnreachable {
                attempts,
                requested_lo: lo,
                requested_hi: hi,
                achieved_lo: achieved.0,
                achieved_hi: achieved.1,
            });
        }
        attempts += 1;
        let candidate = biphasic_template(filter_len, rng);
        let mut ok = true;
        for existing in &accepted {
            let corr: f64 = existing.iter().zip(&candidate).map(|(a, b)| a * b).sum();
            achieved.0 = achieved.0.min(corr);
            achieved.1 = achieved.1.max(corr);
            if corr < lo || corr > hi {
                ok = false;
                break;
            }
        }
        if ok {
            accepted.push(candidate);
        } else if accepted.len() > 1 && attempts % 2_000 == 0 {
            // Stuck against an incompatible partial bank; restart it.
            accepted.clear();
        }
    }
    FilterBank::from_rows(&accepted)
}

fn biphasic_template<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let kf = k as f64;
    let c1 = rng.gen_range(0.20 * kf..0.45 * kf);
    let w1 = rng.gen_range(0.04 * kf..0.10 * kf).max(0.7);
    let c2 = c1 + rng.gen_range(0.12 * kf..0.30 * kf);
    let w2 = w1 * rng.gen_range(1.2..2.2);
    let ratio = rng.gen_range(0.3..0.7);
    let mut h: Vec<f64> = (0..k)
        .map(|i| {
            let t = i as f64;
            let trough = (-(t - c1) * (t - c1) / (2.0 * w1 * w1)).exp();
            let bump = (-(t - c2) * (t - c2) / (2.0 * w2 * w2)).exp();
            -trough + ratio * bump
        })
        .collect();
    crate::conv_ops::normalize(&mut h);
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        SimConfig {
            neurons: 2,
            filter_len: 5,
            sample_rate_hz: 1000.0,
            duration_s: 0.5,
            firing_rate_hz: 20.0,
            amplitudes: vec![
                AmplitudeParams { mean: 10.0, std: 1.0 },
                AmplitudeParams { mean: -8.0, std: 0.5 },
            ],
            noise: NoiseSpec::Sigma(0.1),
            window_len: 50,
            electrodes: 1,
            seed: 42,
        }
    }

    #[test]
    fn zero_rate_gives_no_events() {
        let mut cfg = small_cfg();
        cfg.firing_rate_hz = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let events = generate_events(&cfg, &mut rng).unwrap();
        assert_eq!(events.total_events(), 0);
    }

    #[test]
    fn refractory_gap_holds_across_seeds() {
        let cfg = small_cfg();
        let dead = cfg.filter_len as f64 / cfg.sample_rate_hz;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let events = generate_events(&cfg, &mut rng).unwrap();
            assert!(events.min_gap_s() >= dead, "seed {seed}");
        }
    }

    #[test]
    fn events_are_deterministic_in_seed() {
        let cfg = small_cfg();
        let a = generate_events(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate_events(&cfg, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        for c in 0..2 {
            assert_eq!(a.neuron(c), b.neuron(c));
        }
    }

    #[test]
    fn single_event_places_scaled_filter() {
        let mut cfg = small_cfg();
        cfg.neurons = 1;
        cfg.amplitudes.truncate(1);
        cfg.noise = NoiseSpec::Sigma(0.0);
        let filters =
            FilterBank::from_rows(&[vec![0.5, -1.0, 0.25, 0.1, -0.05]]).unwrap();
        let events = SpikeEventSet {
            per_neuron: vec![vec![SpikeEvent { time_s: 0.02, amplitude: 3.0 }]],
            horizon_s: cfg.duration_s,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let synth = discretize_and_synthesize(&events, &filters, &cfg, &mut rng).unwrap();
        let n0 = 20;
        for (i, &hv) in filters.filter(0).iter().enumerate() {
            assert_eq!(synth.clean[n0 + i], 3.0 * hv);
        }
        assert!(synth.clean.iter().take(n0).all(|&v| v == 0.0));
        assert_eq!(synth.noisy, synth.clean); // sigma = 0
    }

    #[test]
    fn windows_match_codes_exactly() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let filters = make_filter_bank(2, 5, (-1.0, 1.0), &mut rng).unwrap();
        let (_, synth) = simulate_electrode(&cfg, &filters, 0).unwrap();
        let windows = window_signal(&synth.noisy, cfg.window_len).unwrap();
        let clean_windows = window_signal(&synth.clean, cfg.window_len).unwrap();
        assert_eq!(windows.len(), synth.window_codes.len());
        for (j, win) in windows.iter().enumerate() {
            let recon = apply_dictionary(&filters, &synth.window_codes[j]).unwrap();
            // y_j − H x_j − v_j must vanish exactly.
            for i in 0..cfg.window_len {
                let v = win.samples()[i] - synth.clean[j * cfg.window_len + i];
                let lhs = win.samples()[i] - recon[i] - v;
                assert_eq!(lhs, 0.0, "window {j} sample {i}");
                assert_eq!(recon[i].to_bits(), clean_windows[j].samples()[i].to_bits());
            }
        }
    }

    #[test]
    fn snr_roundtrip_near_target() {
        let mut cfg = small_cfg();
        cfg.duration_s = 2.0;
        cfg.noise = NoiseSpec::TargetSnrDb(10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let filters = make_filter_bank(2, 5, (-1.0, 1.0), &mut rng).unwrap();
        let (_, synth) = simulate_electrode(&cfg, &filters, 0).unwrap();
        let noise: Vec<f64> = synth.noisy.iter().zip(&synth.clean).map(|(a, b)| a - b).collect();
        let snr = compute_snr(&synth.clean, &noise).unwrap();
        // 2000 samples: sampling error well under half a dB.
        assert!((snr - 10.0).abs() < 0.5, "snr {snr}");
    }

    #[test]
    fn windowing_drops_remainder_and_preserves_prefix() {
        let signal: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let windows = window_signal(&signal, 3).unwrap();
        assert_eq!(windows.len(), 3);
        let concat: Vec<f64> = windows.iter().flat_map(|w| w.samples().to_vec()).collect();
        assert_eq!(&signal[..9], concat.as_slice());
        assert_eq!(windows[2].window_index(), 2);
    }

    #[test]
    fn snr_hand_values() {
        let clean = vec![1.0, 1.0];
        assert_eq!(compute_snr(&clean, &[1.0, 1.0]).unwrap(), 0.0);
        let quiet: Vec<f64> = vec![0.1, 0.1];
        let db = compute_snr(&clean, &quiet).unwrap();
        assert!((db - 20.0).abs() < 1e-12);
        assert!(compute_snr(&clean, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn filter_bank_respects_correlation_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let single = make_filter_bank(1, 45, (-0.087, 0.455), &mut rng).unwrap();
        let norm = single.row_norms()[0];
        assert!((norm - 1.0).abs() < 1e-12);

        let bank = make_filter_bank(3, 45, (-0.087, 0.455), &mut rng).unwrap();
        for i in 0..3 {
            for j in (i + 1)..3 {
                let corr: f64 = bank
                    .filter(i)
                    .iter()
                    .zip(bank.filter(j))
                    .map(|(a, b)| a * b)
                    .sum();
                assert!(
                    (-0.087..=0.455).contains(&corr),
                    "pair ({i},{j}) correlation {corr}"
                );
            }
        }
    }

    #[test]
    fn filter_bank_deterministic() {
        let a = make_filter_bank(3, 45, (-0.087, 0.455), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        let b = make_filter_bank(3, 45, (-0.087, 0.455), &mut ChaCha8Rng::seed_from_u64(12)).unwrap();
        assert_eq!(a.as_slice(), b.as_slice());
    }

    #[test]
    fn impossible_correlation_range_reports_achieved() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Requiring near-perfect anticorrelation among three distinct
        // templates is infeasible.
        match make_filter_bank(3, 45, (-1.0, -0.999), &mut rng) {
            Err(CrsaeError::CorrelationRangeUnreachable { achieved_lo, achieved_hi, .. }) => {
                assert!(achieved_lo.is_finite() && achieved_hi.is_finite());
            }
            other => panic!("expected range failure, got {other:?}"),
        }
    }
}
