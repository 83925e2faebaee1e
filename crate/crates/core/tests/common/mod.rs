#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use repro_core::glm::inv_logit;
use repro_core::Dataset;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Logistic data `y ~ Bernoulli(inv_logit(X beta))` with i.i.d. normal covariates.
pub fn logistic_data(seed: u64, n: usize, beta: &[f64]) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, beta.len());
    let y = (0..n)
        .map(|i| {
            let z: f64 = (0..beta.len()).map(|k| x[(i, k)] * beta[k]).sum();
            if r.random::<f64>() < inv_logit(z) { 1.0 } else { 0.0 }
        })
        .collect();
    Dataset::new(x, y).unwrap()
}

/// Labels independent of the covariates.
pub fn null_data(seed: u64, n: usize, p: usize) -> Dataset {
    let mut r = rng(seed);
    let x = gaussian_matrix(&mut r, n, p);
    let y = (0..n).map(|_| if r.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
    Dataset::new(x, y).unwrap()
}
