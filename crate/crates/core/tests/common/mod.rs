//! Shared oracles for integration tests: a dense block-Toeplitz route for
//! the operators (via nalgebra) and a dense ISTA reference for the lasso
//! problem. These deliberately never call the crate's convolution paths so
//! the two routes stay independent.

use crsae_core::{CodeMatrix, FilterBank};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Densely materialized dictionary: W × (C·N_e), column (c, l) holds filter
/// c delayed by l samples.
pub fn dense_dictionary(filters: &FilterBank, window_len: usize) -> DMatrix<f64> {
    let k = filters.filter_len();
    let ne = window_len - k + 1;
    let c = filters.filter_count();
    let mut m = DMatrix::zeros(window_len, c * ne);
    for ch in 0..c {
        let h = filters.filter(ch);
        for l in 0..ne {
            for (j, &hj) in h.iter().enumerate() {
                m[(l + j, ch * ne + l)] = hj;
            }
        }
    }
    m
}

/// Stacks a code matrix into the [x_1; ...; x_C] vector matching the dense
/// column order.
pub fn code_to_vector(code: &CodeMatrix) -> DVector<f64> {
    DVector::from_column_slice(code.as_slice())
}

pub fn vector_to_code(v: &DVector<f64>, channels: usize, positions: usize) -> CodeMatrix {
    CodeMatrix::from_flat(channels, positions, v.as_slice().to_vec()).unwrap()
}

pub fn random_bank(rng: &mut ChaCha8Rng, c: usize, k: usize, scale: f64) -> FilterBank {
    let rows: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..k).map(|_| rng.gen_range(-scale..scale)).collect())
        .collect();
    FilterBank::from_rows(&rows).unwrap()
}

pub fn random_code(rng: &mut ChaCha8Rng, c: usize, ne: usize, scale: f64) -> CodeMatrix {
    CodeMatrix::from_flat(
        c,
        ne,
        (0..c * ne).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn random_signal(rng: &mut ChaCha8Rng, w: usize, scale: f64) -> Vec<f64> {
    (0..w).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Largest eigenvalue of HᵀH via dense symmetric eigendecomposition.
pub fn dense_gram_spectral_norm(filters: &FilterBank, window_len: usize) -> f64 {
    let a = dense_dictionary(filters, window_len);
    let gram = a.transpose() * &a;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v))
}

/// Independent dense ISTA on ½‖y − Ax‖² + λ‖x‖₁.
pub fn dense_ista(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    lambda: f64,
    lipschitz: f64,
    iterations: usize,
) -> DVector<f64> {
    let at = a.transpose();
    let mut x = DVector::zeros(a.ncols());
    let threshold = lambda / lipschitz;
    let inv_l = 1.0 / lipschitz;
    for _ in 0..iterations {
        let residual = y - a * &x;
        let grad_step = &x + inv_l * (&at * residual);
        x = grad_step.map(|v| {
            if v > threshold {
                v - threshold
            } else if v < -threshold {
                v + threshold
            } else {
                0.0
            }
        });
    }
    x
}

/// Dense lasso objective for the oracle route.
pub fn dense_lasso_objective(
    y: &DVector<f64>,
    a: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: f64,
) -> f64 {
    let r = y - a * x;
    0.5 * r.norm_squared() + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
}
