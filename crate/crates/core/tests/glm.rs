mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use repro_core::glm::{fit_quasi_mle, inv_logit, link_logit, loglik, loglik_grad, loglik_hess, softplus};
use repro_core::{Dataset, ReproError, Support, WorkingModel};

fn model(tau: &[usize], beta: &[f64]) -> WorkingModel {
    WorkingModel::new(Support::new(tau.to_vec()), beta.to_vec()).unwrap()
}

fn symmetric4() -> Dataset {
    Dataset::from_rows(&[vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]], vec![1.0, 0.0, 1.0, 0.0]).unwrap()
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn dataset_rejects_bad_inputs() {
    assert!(Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![1.0, 0.5]).is_err());
    assert!(Dataset::from_rows(&[vec![1.0], vec![f64::NAN]], vec![1.0, 0.0]).is_err());
    assert!(Dataset::from_rows(&[vec![1.0]], vec![1.0]).is_err());
    assert!(Dataset::new(DMatrix::zeros(3, 0), vec![1.0, 0.0, 1.0]).is_err());
}

#[test]
fn working_model_checks_lengths_and_support() {
    assert!(WorkingModel::new(Support::new(vec![0, 2]), vec![1.0]).is_err());
    let data = symmetric4();
    let m = model(&[3], &[1.0]);
    assert!(loglik(&data, &m).is_err());
    assert!(Support::from_one_based(&[0], 4).is_err());
    assert!(Support::from_one_based(&[5], 4).is_err());
    assert_eq!(Support::from_one_based(&[3, 1], 4).unwrap().as_slice(), &[0, 2]);
}

#[test]
fn scalar_loglik_oracle() {
    let data = Dataset::from_rows(&[vec![1.0], vec![0.0]], vec![1.0, 1.0]).unwrap();
    // second row contributes log(1/2), first row 2 - log(1 + e^2)
    let ll = loglik(&data, &model(&[0], &[2.0])).unwrap();
    let first = 2.0 - (1.0 + 2.0f64.exp()).ln();
    assert_relative_eq!(2.0 * ll - 0.5f64.ln(), first, epsilon = 1e-12);
    assert_relative_eq!(first, -0.126928, epsilon = 1e-6);
}

#[test]
fn loglik_matches_naive_summation() {
    let mut r = common::rng(11);
    let x = common::gaussian_matrix(&mut r, 20, 5);
    let y: Vec<f64> = (0..20).map(|_| if r.random::<f64>() < 0.5 { 1.0 } else { 0.0 }).collect();
    let data = Dataset::new(x.clone(), y.clone()).unwrap();
    let m = model(&[0, 2, 4], &[0.7, -1.3, 0.4]);
    let mut naive = 0.0;
    for i in 0..20 {
        let z = 0.7 * x[(i, 0)] - 1.3 * x[(i, 2)] + 0.4 * x[(i, 4)];
        let eta = 1.0 / (1.0 + (-z).exp());
        naive += y[i] * (eta / (1.0 - eta)).ln() + (1.0 - eta).ln();
    }
    assert_relative_eq!(loglik(&data, &m).unwrap(), naive / 20.0, epsilon = 1e-12);
}

#[test]
fn symmetric_dataset_derivatives() {
    let data = symmetric4();
    let m = WorkingModel::zeros(Support::new(vec![0]));
    assert_eq!(loglik_grad(&data, &m).unwrap(), vec![0.0]);
    assert_relative_eq!(loglik_hess(&data, &m).unwrap()[(0, 0)], -0.25, epsilon = 1e-15);
    let fit = fit_quasi_mle(&data, &Support::new(vec![0])).unwrap();
    assert!(fit.beta[0].abs() < 1e-12);
}

#[test]
fn finite_differences_on_100_instances() {
    let h = 1e-5;
    for seed in 0..100u64 {
        let mut r = common::rng(1000 + seed);
        let n = 30 + (seed as usize % 20);
        let k = 1 + (seed as usize % 4);
        let data = common::logistic_data(seed, n, &vec![0.8; k + 1]);
        let tau: Vec<usize> = (0..k).collect();
        let beta: Vec<f64> = (0..k).map(|_| r.random_range(-1.5..1.5)).collect();
        let base = model(&tau, &beta);
        let grad = loglik_grad(&data, &base).unwrap();
        let hess = loglik_hess(&data, &base).unwrap();
        let shifted = |a: usize, da: f64| {
            let mut b = beta.clone();
            b[a] += da;
            model(&tau, &b)
        };
        for a in 0..k {
            let fd = (loglik(&data, &shifted(a, h)).unwrap() - loglik(&data, &shifted(a, -h)).unwrap()) / (2.0 * h);
            assert!(relative_error(grad[a], fd) < 1e-5, "seed {seed} grad[{a}] {} vs {fd}", grad[a]);
            let g_plus = loglik_grad(&data, &shifted(a, h)).unwrap();
            let g_minus = loglik_grad(&data, &shifted(a, -h)).unwrap();
            for c in 0..k {
                let fd = (g_plus[c] - g_minus[c]) / (2.0 * h);
                assert!(relative_error(hess[(c, a)], fd) < 1e-5, "seed {seed} hess[{c},{a}]");
            }
        }
    }
}

#[test]
fn separable_toy_is_rejected() {
    let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![if i < 5 { -1.0 } else { 1.0 }]).collect();
    let y = (0..10).map(|i| if i < 5 { 0.0 } else { 1.0 }).collect();
    let data = Dataset::from_rows(&rows, y).unwrap();
    assert!(matches!(fit_quasi_mle(&data, &Support::new(vec![0])), Err(ReproError::Separation(_))));
}

#[test]
fn mle_needs_both_classes_and_small_support() {
    let data = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![3.0]], vec![1.0, 1.0, 1.0]).unwrap();
    assert!(fit_quasi_mle(&data, &Support::new(vec![0])).is_err());
    let data = common::logistic_data(3, 4, &[1.0; 4]);
    assert!(fit_quasi_mle(&data, &Support::new(vec![0, 1, 2, 3])).is_err());
}

/// Plain gradient ascent on the mean log-likelihood, run to a tight tolerance.
fn gradient_ascent_oracle(data: &Dataset, tau: &[usize]) -> Vec<f64> {
    let mut beta = vec![0.0; tau.len()];
    for _ in 0..200_000 {
        let g = loglik_grad(data, &model(tau, &beta)).unwrap();
        if g.iter().all(|v| v.abs() < 1e-11) {
            break;
        }
        beta.iter_mut().zip(&g).for_each(|(b, gi)| *b += 2.0 * gi);
    }
    beta
}

#[test]
fn two_coefficient_mle_recovers_truth() {
    let data = common::logistic_data(2024, 500, &[1.5, -1.0]);
    let fit = fit_quasi_mle(&data, &Support::new(vec![0, 1])).unwrap();
    assert!((fit.beta[0] - 1.5).abs() < 0.25 && (fit.beta[1] + 1.0).abs() < 0.25, "{:?}", fit.beta);
    let oracle = gradient_ascent_oracle(&data, &[0, 1]);
    for (a, b) in fit.beta.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-6, "{a} vs oracle {b}");
    }
    let g = loglik_grad(&data, &fit).unwrap();
    assert!(g.iter().all(|v| v.abs() <= 1e-8));
}

#[test]
fn mle_is_a_local_maximum_under_perturbations() {
    let data = common::logistic_data(5, 200, &[1.0, -0.5, 0.25]);
    let tau = Support::new(vec![0, 1, 2]);
    let fit = fit_quasi_mle(&data, &tau).unwrap();
    let best = loglik(&data, &fit).unwrap();
    let mut r = common::rng(6);
    for _ in 0..100 {
        let mut dir: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let radius = 0.1 * r.random::<f64>();
        dir.iter_mut().for_each(|v| *v *= radius / norm);
        let beta: Vec<f64> = fit.beta.iter().zip(&dir).map(|(a, b)| a + b).collect();
        assert!(loglik(&data, &model(&[0, 1, 2], &beta)).unwrap() <= best + 1e-14);
    }
}

#[test]
fn mle_is_invariant_to_row_order() {
    let data = common::logistic_data(8, 150, &[0.9, -0.6, 0.3]);
    let tau = Support::new(vec![0, 1, 2]);
    let fit = fit_quasi_mle(&data, &tau).unwrap();
    let n = data.n();
    let order: Vec<usize> = (0..n).map(|i| (i * 37 + 11) % n).collect();
    let x = DMatrix::from_fn(n, 3, |i, k| data.x()[(order[i], k)]);
    let y = order.iter().map(|&i| data.y()[i]).collect();
    let permuted = fit_quasi_mle(&Dataset::new(x, y).unwrap(), &tau).unwrap();
    for (a, b) in fit.beta.iter().zip(&permuted.beta) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn stable_logistic_helpers() {
    assert_eq!(softplus(800.0), 800.0);
    assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
    assert_relative_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
    assert!(inv_logit(700.0) <= 1.0 && inv_logit(-700.0) > 0.0);
    assert!(link_logit(-0.1).is_err() && link_logit(f64::NAN).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn link_round_trip(z in -13.0f64..13.0) {
        prop_assert!((link_logit(inv_logit(z)).unwrap() - z).abs() <= 1e-10);
    }

    #[test]
    fn loglik_is_concave_along_segments(seed in 0u64..1000, a in prop::collection::vec(-2.0f64..2.0, 3), b in prop::collection::vec(-2.0f64..2.0, 3)) {
        let data = common::logistic_data(seed, 40, &[0.5, 0.5, 0.5]);
        let f = |t: f64| {
            let beta: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + t * (y - x)).collect();
            loglik(&data, &model(&[0, 1, 2], &beta)).unwrap()
        };
        for step in 1..10 {
            let t = step as f64 / 10.0;
            let second = f(t + 0.05) - 2.0 * f(t) + f(t - 0.05);
            prop_assert!(second <= 1e-8);
        }
    }

    #[test]
    fn loglik_is_nonpositive(seed in 0u64..1000, beta in prop::collection::vec(-5.0f64..5.0, 2)) {
        let data = common::logistic_data(seed, 25, &[1.0, 1.0]);
        prop_assert!(loglik(&data, &model(&[0, 1], &beta)).unwrap() <= 0.0);
    }
}
