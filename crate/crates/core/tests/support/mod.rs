//! Brute-force references for the integration tests. Nothing here calls the library's
//! numerical code: every matrix is assembled by explicit index loops from the defining
//! formulas, and minimizers are plain grid and golden-section searches.
#![allow(dead_code)]

pub mod oracles;
pub mod report;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn normal_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Small heteroskedastic IV instance: `n` observations, `k` instruments, `g` endogenous
/// regressors, structural coefficients all equal to one.
pub struct Instance {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub beta: DVector<f64>,
}

pub fn instance(seed: u64, n: usize, k: usize, g: usize) -> Instance {
    instance_with_strength(seed, n, k, g, 0.6)
}

/// As [`instance`] with first-stage coefficients scaled by `strength`.
pub fn instance_with_strength(seed: u64, n: usize, k: usize, g: usize, strength: f64) -> Instance {
    let mut r = rng(seed);
    let z = normal_matrix(&mut r, n, k);
    let pi = normal_matrix(&mut r, k, g) * strength;
    let u = normal_vector(&mut r, n);
    let mut x = &z * &pi;
    for j in 0..g {
        for i in 0..n {
            x[(i, j)] += 0.5 * u[i] + r.sample::<f64, _>(StandardNormal);
        }
    }
    let beta = DVector::from_element(g, 1.0);
    let y = DVector::from_fn(n, |i, _| {
        let scale = 0.5 + z[(i, 0)].abs();
        (x.row(i) * &beta)[0] + scale * (0.6 * u[i] + 0.8 * r.sample::<f64, _>(StandardNormal))
    });
    Instance { y, x, z, beta }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(b.amax()).max(1e-300);
    (a - b).amax() / scale
}
