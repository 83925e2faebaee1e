mod common;

use proptest::prelude::*;
use rand::Rng;
use repro_core::candidate::{CandidateParams, CandidateSet};
use repro_core::glm::fit_quasi_mle;
use repro_core::model_cs::{
    model_confidence_set, nuclear_stat, profile_nuclear, simulate_selector_distribution, NuisanceMode,
    SelectorDistribution, SelectorOutcome,
};
use repro_core::solvers::{select_model, SurrogateLoss};
use repro_core::synthetic::{simulate, SimDesign, SimModel};
use repro_core::{Dataset, Support, WorkingModel};

fn candidates(models: Vec<Vec<usize>>) -> CandidateSet {
    let models: Vec<Support> = models.into_iter().map(Support::new).collect();
    let s_u = models.iter().map(Support::len).max().unwrap_or(1).max(1);
    CandidateSet {
        params: CandidateParams { d: 1, s_u, loss: SurrogateLoss::Hinge, seed: 0, xi_grid: vec![0.0] },
        provenance: vec![Vec::new(); models.len()],
        models,
        warnings: Vec::new(),
    }
}

fn theta(tau: Vec<usize>, beta: Vec<f64>) -> WorkingModel {
    WorkingModel::new(Support::new(tau), beta).unwrap()
}

fn design(seed: u64, n: usize, p: usize) -> Dataset {
    common::null_data(seed, n, p)
}

fn max_probability(dist: &SelectorDistribution) -> f64 {
    dist.probabilities().map(|(_, q)| q).fold(0.0, f64::max)
}

fn dist_of(counts: &[usize]) -> SelectorDistribution {
    let outcomes = counts
        .iter()
        .enumerate()
        .flat_map(|(i, &c)| std::iter::repeat_n(SelectorOutcome::Selected(Support::new(vec![i])), c));
    SelectorDistribution::from_outcomes(theta(vec![], vec![]), outcomes).unwrap()
}

fn m3_small(seed: u64) -> Dataset {
    simulate(&SimDesign::with_size(SimModel::M3, 200, 30, 10), seed).unwrap().data
}

#[test]
fn huge_signal_concentrates_the_selector() {
    let data = design(1, 300, 20);
    let th = theta(vec![0, 1, 2, 3], vec![50.0; 4]);
    let dist = simulate_selector_distribution(&data, &th, 200, 4, 7).unwrap();
    assert_eq!(dist.counts.values().sum::<usize>(), 200);
    assert!(max_probability(&dist) >= 0.6, "max P = {}", max_probability(&dist));
}

#[test]
fn zero_signal_gives_a_diffuse_selector() {
    let data = design(2, 300, 20);
    let th = theta(vec![0, 1, 2, 3], vec![0.0; 4]);
    let dist = simulate_selector_distribution(&data, &th, 200, 4, 8).unwrap();
    assert!(max_probability(&dist) <= 0.9, "max P = {}", max_probability(&dist));
}

#[test]
fn single_draw_has_unit_mass() {
    let data = design(3, 100, 10);
    let th = theta(vec![0, 1], vec![2.0, -1.0]);
    let dist = simulate_selector_distribution(&data, &th, 1, 2, 9).unwrap();
    assert_eq!(dist.counts.len(), 1);
    let (_, q) = dist.probabilities().next().unwrap();
    assert_eq!(q, 1.0);
}

#[test]
fn selector_distribution_is_deterministic_and_validated() {
    let data = design(4, 120, 10);
    let th = theta(vec![1, 4], vec![1.5, 1.0]);
    let a = simulate_selector_distribution(&data, &th, 40, 2, 11).unwrap();
    let b = simulate_selector_distribution(&data, &th, 40, 2, 11).unwrap();
    assert_eq!(a, b);
    assert!(simulate_selector_distribution(&data, &th, 0, 2, 11).is_err());
    assert!(SelectorDistribution::from_outcomes(th, Vec::new()).is_err());
}

#[test]
fn synthetic_draw_matches_a_direct_selector_call() {
    // every draw is a selector run on a response generated from the same design
    let data = design(5, 150, 12);
    let th = theta(vec![0, 2], vec![3.0, -2.0]);
    let dist = simulate_selector_distribution(&data, &th, 20, 2, 3).unwrap();
    for outcome in dist.counts.keys() {
        match outcome {
            SelectorOutcome::Selected(s) => assert!(s.len() <= 2),
            SelectorOutcome::Failed => panic!("selector failed on well-posed data"),
        }
    }
    assert!(select_model(&data, 2, 50).unwrap().len() <= 2);
}

#[test]
fn nuclear_stat_hand_examples() {
    // counts {A:6, B:3, C:1}: only A exceeds B
    let d = dist_of(&[6, 3, 1]);
    assert!((nuclear_stat(&d, &Support::new(vec![1])) - 0.6).abs() < 1e-15);
    assert_eq!(nuclear_stat(&d, &Support::new(vec![0])), 0.0);
    assert!((nuclear_stat(&d, &Support::new(vec![2])) - 0.9).abs() < 1e-15);
    // ties never exceed
    let tie = dist_of(&[5, 5]);
    assert_eq!(nuclear_stat(&tie, &Support::new(vec![0])), 0.0);
    assert_eq!(nuclear_stat(&tie, &Support::new(vec![1])), 0.0);
    // an observed support that never occurred is exceeded by every draw
    assert_eq!(nuclear_stat(&d, &Support::new(vec![7])), 1.0);
}

#[test]
fn failed_draws_never_match_the_observed_support() {
    let outcomes = vec![
        SelectorOutcome::Failed,
        SelectorOutcome::Failed,
        SelectorOutcome::Failed,
        SelectorOutcome::Selected(Support::empty()),
    ];
    let d = SelectorDistribution::from_outcomes(theta(vec![], vec![]), outcomes).unwrap();
    assert_eq!(d.count(&Support::empty()), 1);
    assert_eq!(nuclear_stat(&d, &Support::empty()), 0.75);
}

#[test]
fn statistic_is_a_multiple_of_one_over_m_on_200_random_distributions() {
    let mut r = common::rng(17);
    for _ in 0..200 {
        let k = r.random_range(1..8);
        let counts: Vec<usize> = (0..k).map(|_| r.random_range(0..40)).collect();
        if counts.iter().sum::<usize>() == 0 {
            continue;
        }
        let d = dist_of(&counts);
        let total: f64 = d.probabilities().map(|(_, q)| q).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(d.counts.values().sum::<usize>(), d.m);
        for j in 0..k + 1 {
            let t = nuclear_stat(&d, &Support::new(vec![j]));
            let scaled = t * d.m as f64;
            assert!((scaled - scaled.round()).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&t));
            if d.count(&Support::new(vec![j])) > 0 {
                assert!(t <= 1.0 - 1.0 / d.m as f64 + 1e-12);
            }
        }
        let mode = (0..k).max_by_key(|&i| (counts[i], std::cmp::Reverse(i))).unwrap();
        assert_eq!(nuclear_stat(&d, &Support::new(vec![mode])), 0.0);
    }
}

#[test]
fn confidence_set_is_a_thresholded_subset_of_the_candidates() {
    let data = m3_small(21);
    let cand = candidates(vec![vec![0, 1, 2, 3], vec![0, 1, 2], vec![0, 1, 2, 3, 9], vec![5, 6]]);
    let mcs = model_confidence_set(&data, &cand, 0.95, 60, NuisanceMode::Mle, 4).unwrap();
    assert_eq!(mcs.models.len() + mcs.rejected.len() + mcs.excluded.len(), cand.len());
    for t in &mcs.models {
        assert!(cand.contains(&t.tau));
        assert!(t.t_hat < 0.95);
        let scaled = t.t_hat * 60.0;
        assert!((scaled - scaled.round()).abs() < 1e-9);
    }
    for t in &mcs.rejected {
        assert!(t.t_hat >= 0.95);
    }
    // the mle plug-in is what was tested
    for t in mcs.models.iter().chain(&mcs.rejected) {
        assert_eq!(t.beta_used, fit_quasi_mle(&data, &t.tau).unwrap().beta);
    }
    let again = model_confidence_set(&data, &cand, 0.95, 60, NuisanceMode::Mle, 4).unwrap();
    assert_eq!(serde_json::to_string(&mcs).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn confidence_sets_nest_in_alpha() {
    let data = m3_small(22);
    let cand = candidates(vec![vec![0, 1, 2, 3], vec![0, 1], vec![0, 1, 2], vec![2, 7], vec![0, 1, 2, 3, 4]]);
    let low = model_confidence_set(&data, &cand, 0.5, 50, NuisanceMode::Mle, 5).unwrap();
    let high = model_confidence_set(&data, &cand, 0.999, 50, NuisanceMode::Mle, 5).unwrap();
    assert!(low.models.iter().all(|t| high.contains(&t.tau)));
    assert!(high.len() >= low.len());
    // re-thresholding agrees with a fresh run
    let relevel = high.at_level(0.5);
    let names = |s: &repro_core::model_cs::ModelConfidenceSet| s.models.iter().map(|t| t.tau.clone()).collect::<Vec<_>>();
    assert_eq!(names(&relevel), names(&low));
    // at alpha = 1 everything with T < 1 stays
    let all = high.at_level(1.0);
    let expected = high.models.iter().chain(&high.rejected).filter(|t| t.t_hat < 1.0).count();
    assert_eq!(all.len(), expected);
}

#[test]
fn invalid_arguments_are_rejected() {
    let data = m3_small(23);
    let cand = candidates(vec![vec![0]]);
    for alpha in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(model_confidence_set(&data, &cand, alpha, 10, NuisanceMode::Mle, 1).is_err());
    }
    assert!(model_confidence_set(&data, &cand, 0.9, 0, NuisanceMode::Mle, 1).is_err());
    let out_of_range = candidates(vec![vec![0, 30]]);
    assert!(model_confidence_set(&data, &out_of_range, 0.9, 10, NuisanceMode::Mle, 1).is_err());
}

#[test]
fn candidate_with_separated_mle_is_excluded() {
    let mut r = common::rng(31);
    let x = common::gaussian_matrix(&mut r, 120, 6);
    let y: Vec<f64> = (0..120).map(|i| if x[(i, 0)] > 0.0 { 1.0 } else { 0.0 }).collect();
    let data = Dataset::new(x, y).unwrap();
    let cand = candidates(vec![vec![0], vec![3]]);
    let mcs = model_confidence_set(&data, &cand, 0.9, 20, NuisanceMode::Mle, 2).unwrap();
    assert_eq!(mcs.excluded.len(), 1);
    assert_eq!(mcs.excluded[0].tau, Support::new(vec![0]));
    assert!(!mcs.contains(&Support::new(vec![0])));
}

#[test]
fn profile_with_unit_budget_returns_the_mle() {
    let data = m3_small(41);
    let tau = Support::new(vec![0, 1, 2, 3]);
    let mle = fit_quasi_mle(&data, &tau).unwrap();
    let (beta, _) = profile_nuclear(&data, &tau, 30, 6, 1).unwrap();
    assert_eq!(beta, mle.beta);
    assert!(profile_nuclear(&data, &tau, 30, 6, 0).is_err());
}

#[test]
fn profile_never_worse_than_its_start() {
    for seed in 0..3 {
        let data = m3_small(50 + seed);
        for tau in [vec![0, 1, 2], vec![0, 4]] {
            let tau = Support::new(tau);
            let (_, t_start) = profile_nuclear(&data, &tau, 30, seed, 1).unwrap();
            let (beta, t_min) = profile_nuclear(&data, &tau, 30, seed, 25).unwrap();
            assert_eq!(beta.len(), tau.len());
            assert!(t_min <= t_start, "profile {t_min} above start {t_start}");
        }
    }
}

#[test]
fn profile_mode_retains_at_least_the_mle_set_here() {
    let data = m3_small(61);
    let cand = candidates(vec![vec![0, 1, 2, 3], vec![0, 1, 2], vec![1, 5]]);
    let mle = model_confidence_set(&data, &cand, 0.9, 30, NuisanceMode::Mle, 8).unwrap();
    let prof = model_confidence_set(&data, &cand, 0.9, 30, NuisanceMode::Profile, 8).unwrap();
    // the profile minimum starts from the same point with the same noises
    for t in &mle.models {
        assert!(prof.contains(&t.tau));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn statistic_bounds(counts in proptest::collection::vec(1usize..30, 1..6), obs in 0usize..8) {
        let d = dist_of(&counts);
        let t = nuclear_stat(&d, &Support::new(vec![obs]));
        prop_assert!((0.0..=1.0).contains(&t));
        let exceed: usize = counts.iter().filter(|&&c| obs >= counts.len() || c > counts[obs]).sum();
        prop_assert_eq!(t, exceed as f64 / d.m as f64);
    }
}
