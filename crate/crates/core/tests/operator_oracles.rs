//! Operator correctness against the densely materialized block-Toeplitz
//! route: forward/adjoint equivalence, the adjoint identity, and the power
//! iteration against a dense eigendecomposition.

mod common;

use common::*;
use crsae_core::{apply_adjoint, apply_dictionary, estimate_lipschitz, CodeMatrix, FilterBank};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn forward_matches_dense_on_small_shape_sweep() {
    // Exhaustive over small shapes with W <= 64.
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for c in 1..=3usize {
        for k in [1usize, 2, 3, 5, 8] {
            for w in [k + 1, 2 * k + 3, 31, 64] {
                if w <= k || w > 64 {
                    continue;
                }
                let ne = w - k + 1;
                let filters = random_bank(&mut rng, c, k, 1.5);
                let code = random_code(&mut rng, c, ne, 2.0);
                let fast = apply_dictionary(&filters, &code).unwrap();
                let dense = dense_dictionary(&filters, w) * code_to_vector(&code);
                for i in 0..w {
                    assert!(
                        (fast[i] - dense[i]).abs() <= 1e-12 * dense[i].abs().max(1.0),
                        "C={c} K={k} W={w} sample {i}: {} vs {}",
                        fast[i],
                        dense[i]
                    );
                }
            }
        }
    }
}

#[test]
fn adjoint_matches_dense_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    for c in 1..=3usize {
        for (k, w) in [(2usize, 9usize), (4, 16), (7, 40), (5, 64)] {
            let filters = random_bank(&mut rng, c, k, 1.0);
            let signal = random_signal(&mut rng, w, 2.0);
            let fast = apply_adjoint(&filters, &signal).unwrap();
            let dense = dense_dictionary(&filters, w).transpose() * DVector::from_column_slice(&signal);
            let fast_v = code_to_vector(&fast);
            for i in 0..dense.len() {
                assert!((fast_v[i] - dense[i]).abs() <= 1e-12 * dense[i].abs().max(1.0));
            }
        }
    }
}

#[test]
fn adjoint_identity_on_100_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    for trial in 0..100 {
        let c = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=9);
        let w = rng.gen_range(k + 1..=96);
        let ne = w - k + 1;
        let filters = random_bank(&mut rng, c, k, 1.5);
        let code = random_code(&mut rng, c, ne, 3.0);
        let signal = random_signal(&mut rng, w, 3.0);

        let hx = apply_dictionary(&filters, &code).unwrap();
        let hty = apply_adjoint(&filters, &signal).unwrap();
        let lhs: f64 = hx.iter().zip(&signal).map(|(a, b)| a * b).sum();
        let rhs: f64 = code.as_slice().iter().zip(hty.as_slice()).map(|(a, b)| a * b).sum();
        let x_norm = code.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let y_norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(
            (lhs - rhs).abs() <= 1e-10 * x_norm * y_norm,
            "trial {trial}: <Hx,y>={lhs} <x,Hty>={rhs}"
        );
    }
}

#[test]
fn lipschitz_estimate_tracks_dense_eigenvalue() {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    for trial in 0..25 {
        let c = rng.gen_range(1..=3);
        let k = rng.gen_range(2..=8);
        let w = rng.gen_range(k + 2..=48);
        let filters = random_bank(&mut rng, c, k, 1.0);
        let est = estimate_lipschitz(&filters, w, 5000, 1e-9).unwrap();
        let truth = dense_gram_spectral_norm(&filters, w);
        assert!(est.value >= truth * (1.0 - 1e-9), "trial {trial}: L={} < {truth}", est.value);
        assert!(
            (est.raw_estimate - truth).abs() <= 0.01 * truth,
            "trial {trial}: raw {} vs dense {truth}",
            est.raw_estimate
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_adjoint_identity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.gen_range(1..=3);
        let k = rng.gen_range(1..=6);
        let w = rng.gen_range(k + 1..=40);
        let filters = random_bank(&mut rng, c, k, 1.0);
        let code = random_code(&mut rng, c, w - k + 1, 2.0);
        let signal = random_signal(&mut rng, w, 2.0);
        let hx = apply_dictionary(&filters, &code).unwrap();
        let hty = apply_adjoint(&filters, &signal).unwrap();
        let lhs: f64 = hx.iter().zip(&signal).map(|(a, b)| a * b).sum();
        let rhs: f64 = code.as_slice().iter().zip(hty.as_slice()).map(|(a, b)| a * b).sum();
        let xn = code.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * xn * yn);
    }

    #[test]
    fn prop_forward_linearity(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = rng.gen_range(1..=2);
        let k = rng.gen_range(1..=5);
        let w = rng.gen_range(k + 1..=32);
        let ne = w - k + 1;
        let filters = random_bank(&mut rng, c, k, 1.0);
        let x1 = random_code(&mut rng, c, ne, 1.0);
        let x2 = random_code(&mut rng, c, ne, 1.0);
        let mixed = CodeMatrix::from_flat(
            c,
            ne,
            x1.as_slice().iter().zip(x2.as_slice()).map(|(a, b)| alpha * a + beta * b).collect(),
        ).unwrap();
        let lhs = apply_dictionary(&filters, &mixed).unwrap();
        let y1 = apply_dictionary(&filters, &x1).unwrap();
        let y2 = apply_dictionary(&filters, &x2).unwrap();
        for i in 0..w {
            let rhs = alpha * y1[i] + beta * y2[i];
            prop_assert!((lhs[i] - rhs).abs() <= 1e-11 * rhs.abs().max(1.0));
        }
    }
}

#[test]
fn delta_filter_bank_behaves_as_identity() {
    // h = [1, 0, ...] makes H a windowed copy; the estimate must be 1.01.
    let mut row = vec![0.0; 6];
    row[0] = 1.0;
    let filters = FilterBank::from_rows(&[row]).unwrap();
    let est = estimate_lipschitz(&filters, 24, 200, 1e-10).unwrap();
    assert!((est.value - 1.01).abs() < 1e-6);
}
