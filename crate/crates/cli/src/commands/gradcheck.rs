//! `gradcheck`: the finite-difference oracle as a user command. Prints one
//! line per shape and exits nonzero if any shape misses the tolerance.

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crsae_core::{
    apply_adjoint, backprop_filter_gradient, decode, estimate_lipschitz,
    finite_difference_gradient, fista_encode, FilterBank, FistaConfig, SignalWindow,
};

const FD_STEP: f64 = 1e-6;
const TOLERANCE: f64 = 1e-5;

pub const DEFAULT_SHAPES: [(usize, usize, usize, usize); 4] =
    [(1, 3, 12, 1), (1, 3, 12, 3), (2, 8, 64, 5), (3, 8, 64, 10)];

/// "C,K,W,T;C,K,W,T" → shape list.
pub fn parse_shapes(spec: &str) -> Result<Vec<(usize, usize, usize, usize)>> {
    let mut shapes = Vec::new();
    for group in spec.split(';').filter(|s| !s.is_empty()) {
        let parts: Vec<usize> = group
            .split(',')
            .map(|p| p.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()?;
        if parts.len() != 4 {
            bail!("shape {group:?} must be C,K,W,T");
        }
        shapes.push((parts[0], parts[1], parts[2], parts[3]));
    }
    if shapes.is_empty() {
        bail!("no shapes given");
    }
    Ok(shapes)
}

fn kink_margin(y: &SignalWindow, filters: &FilterBank, cfg: &FistaConfig) -> f64 {
    let (_, trace) = fista_encode(y, filters, cfg, true).expect("forward pass");
    let trace = trace.unwrap();
    let mut margin = f64::INFINITY;
    for t in 1..=trace.iterations() {
        for &v in trace.pre_shrink(t).as_slice() {
            margin = margin.min((v.abs() - cfg.threshold()).abs());
        }
    }
    margin
}

fn kink_free_instance(
    seed: u64,
    c: usize,
    k: usize,
    w: usize,
    t: usize,
) -> Result<(SignalWindow, FilterBank, FistaConfig)> {
    for attempt in 0..200u64 {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let rows: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..k).map(|_| rng.gen_range(-0.6..0.6)).collect())
            .collect();
        let filters = FilterBank::from_rows(&rows)?;
        let y = SignalWindow::new((0..w).map(|_| rng.gen_range(-1.0..1.0)).collect(), 0)?;
        let pulled = apply_adjoint(&filters, y.samples())?;
        let lambda = (0.08 + 0.3 * rng.gen_range(0.0..1.0)) * pulled.max_abs();
        let lipschitz = estimate_lipschitz(&filters, w, 2000, 1e-9)?.value;
        let cfg = FistaConfig { lambda, lipschitz, iterations: t };
        if kink_margin(&y, &filters, &cfg) > 10.0 * FD_STEP {
            return Ok((y, filters, cfg));
        }
    }
    bail!("could not sample a kink-free instance for C={c} K={k} W={w} T={t}")
}

/// Runs the check over `shapes`. `corrupt_gradient` deliberately biases the
/// replayed gradient; it exists as a negative control for the exit status.
pub fn cmd_gradcheck(
    shapes: &[(usize, usize, usize, usize)],
    seed: u64,
    corrupt_gradient: bool,
) -> Result<()> {
    let mut failures = 0usize;
    for &(c, k, w, t) in shapes {
        if w <= k {
            bail!("shape C={c} K={k} W={w} T={t}: window must exceed the filter length");
        }
        let shape_seed = seed ^ ((c as u64) << 24 | (k as u64) << 16 | (w as u64) << 8 | t as u64);
        let (y, filters, cfg) = kink_free_instance(shape_seed, c, k, w, t)?;
        let (code, trace) = fista_encode(&y, &filters, &cfg, true)?;
        let y_hat = decode(&filters, &code)?;
        let mut bp = backprop_filter_gradient(&y, &filters, &cfg, &trace.unwrap(), &y_hat)?;
        if corrupt_gradient {
            bp.as_mut_slice()[0] += 1e-3;
        }
        let fd = finite_difference_gradient(&y, &filters, &cfg, FD_STEP)?;
        let max_rel = bp
            .as_slice()
            .iter()
            .zip(fd.as_slice())
            .map(|(b, f)| (b - f).abs() / f.abs().max(1e-8))
            .fold(0.0, f64::max);
        let pass = max_rel <= TOLERANCE;
        if !pass {
            failures += 1;
        }
        println!(
            "C={c} K={k} W={w} T={t}: max_rel_err={max_rel:.3e} {}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    if failures > 0 {
        bail!("{failures} gradient check(s) failed");
    }
    Ok(())
}
