//! Model candidate sets: one adaptive-L1 surrogate fit per synthetic logistic noise, tuned
//! by EBIC over a grid of `xi`, with the selected supports collected and deduplicated.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::error::{ReproError, Result};
use crate::glm::{fit_quasi_mle, loglik, Dataset, Support};
use crate::rng::{substream, Purpose};
use crate::solvers::{adaptive_weights, AugmentedContext, AugmentedFit, SurrogateLoss};
use crate::special::ln_binomial;

/// Default `xi` grid, from plain BIC to the full extended penalty.
pub const DEFAULT_XI_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// Default sparsity upper bound.
pub const DEFAULT_SPARSITY_BOUND: usize = 10;

/// Number of levels on each adaptive-L1 path.
pub const LAMBDA_GRID_SIZE: usize = 50;

/// Folds used by the cross-validated ridge initializer.
pub const RIDGE_FOLDS: usize = 3;

/// Extra support sizes past the bound explored before a path is cut short.
const PATH_SLACK: usize = 2;

/// The three additive parts of the extended BIC.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EbicScore {
    pub deviance_term: f64,
    pub complexity_term: f64,
    pub combinatorial_term: f64,
}

impl EbicScore {
    pub fn total(&self) -> f64 {
        self.deviance_term + self.complexity_term + self.combinatorial_term
    }

    fn with_terms(deviance_term: f64, size: usize, n: usize, p: usize, xi: f64) -> Self {
        Self {
            deviance_term,
            complexity_term: size as f64 * (n as f64).ln(),
            combinatorial_term: 2.0 * xi * ln_binomial(p, size),
        }
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&xi) {
        return Err(ReproError::InvalidInput(format!("xi must lie in [0, 1], got {xi}")));
    }
    Ok(())
}

/// EBIC of one augmented fit: `2 sum_i L(margin_i) + |tau| log n + 2 xi log C(p, |tau|)`.
pub fn ebic_score(
    data: &Dataset,
    eps_star: &[f64],
    fit: &AugmentedFit,
    loss: SurrogateLoss,
    xi: f64,
) -> Result<EbicScore> {
    check_xi(xi)?;
    if eps_star.len() != data.n() || fit.beta.len() != data.p() {
        return Err(ReproError::InvalidInput("noise or coefficient length mismatch".into()));
    }
    let deviance = 2.0 * fit.data_fit(data, eps_star, loss);
    Ok(EbicScore::with_terms(deviance, fit.support.len(), data.n(), data.p(), xi))
}

/// EBIC with the working-GLM deviance at the quasi-MLE on `tau`: `-2 n l_bar + ...`.
pub fn mle_ebic(data: &Dataset, tau: &Support, xi: f64) -> Result<EbicScore> {
    check_xi(xi)?;
    let model = fit_quasi_mle(data, tau)?;
    let deviance = -2.0 * data.n() as f64 * loglik(data, &model)?;
    Ok(EbicScore::with_terms(deviance, tau.len(), data.n(), data.p(), xi))
}

/// The support picked for one `xi` together with the level that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseChoice {
    pub xi: f64,
    pub lambda: f64,
    pub support: Support,
}

/// Runs the ridge initializer, the adaptive-L1 path, and the EBIC choice for one noise.
pub fn candidate_for_noise(
    data: &Dataset,
    eps_star: &[f64],
    loss: SurrogateLoss,
    s_u: usize,
    xi_grid: &[f64],
) -> Result<Vec<NoiseChoice>> {
    let ctx = AugmentedContext::new(data, RIDGE_FOLDS.min(data.n()))?;
    candidate_for_noise_in(&ctx, eps_star, loss, s_u, xi_grid)
}

/// As [`candidate_for_noise`] with a prebuilt context shared across noises.
pub fn candidate_for_noise_in(
    ctx: &AugmentedContext<'_>,
    eps_star: &[f64],
    loss: SurrogateLoss,
    s_u: usize,
    xi_grid: &[f64],
) -> Result<Vec<NoiseChoice>> {
    check_selection_args(s_u, xi_grid)?;
    let ridge = ctx.fit_ridge_cv(eps_star, loss)?;
    let weights = adaptive_weights(&ridge.beta);
    let path = ctx.adaptive_path(eps_star, loss, &weights, LAMBDA_GRID_SIZE, Some(s_u + PATH_SLACK))?;
    let admissible: Vec<(&AugmentedFit, f64)> = path
        .iter()
        .filter(|fit| fit.support.len() <= s_u)
        .map(|fit| (fit, 2.0 * fit.data_fit(ctx.data, eps_star, loss)))
        .collect();
    let (n, p) = (ctx.data.n(), ctx.data.p());
    Ok(xi_grid
        .iter()
        .map(|&xi| {
            let mut best: Option<(f64, &AugmentedFit)> = None;
            for &(fit, deviance) in &admissible {
                let score = EbicScore::with_terms(deviance, fit.support.len(), n, p, xi).total();
                // ties keep the larger level, which comes first on the path
                if best.is_none_or(|(b, _)| score < b) {
                    best = Some((score, fit));
                }
            }
            match best {
                Some((_, fit)) => NoiseChoice { xi, lambda: fit.lambda, support: fit.support.clone() },
                None => NoiseChoice { xi, lambda: f64::NAN, support: Support::empty() },
            }
        })
        .collect())
}

fn check_selection_args(s_u: usize, xi_grid: &[f64]) -> Result<()> {
    if s_u == 0 {
        return Err(ReproError::InvalidInput("sparsity bound s_u must be at least 1".into()));
    }
    if xi_grid.is_empty() {
        return Err(ReproError::InvalidInput("xi grid is empty".into()));
    }
    xi_grid.iter().try_for_each(|&xi| check_xi(xi))
}

/// Standard logistic noise for repro draw `j`.
pub fn logistic_noise(n: usize, seed: u64, j: usize) -> Vec<f64> {
    let mut rng = substream(seed, Purpose::CandidateNoise, j as u64);
    (0..n)
        .map(|_| {
            let u: f64 = Open01.sample(&mut rng);
            (u / (1.0 - u)).ln()
        })
        .collect()
}

/// Settings recorded alongside a candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateParams {
    pub d: usize,
    pub s_u: usize,
    pub loss: SurrogateLoss,
    pub seed: u64,
    pub xi_grid: Vec<f64>,
}

/// Where a support came from: repro draw `j` (1-based) at `(xi, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub draw: usize,
    pub xi: f64,
    pub lambda: Option<f64>,
}

/// A repro draw whose fit failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawWarning {
    pub draw: usize,
    pub message: String,
}

/// Deduplicated supports with their provenance.
///
/// Models are ordered by size, then lexicographically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CandidateSetDoc", try_from = "CandidateSetDoc")]
pub struct CandidateSet {
    pub params: CandidateParams,
    pub models: Vec<Support>,
    /// Parallel to `models`.
    pub provenance: Vec<Vec<Origin>>,
    pub warnings: Vec<DrawWarning>,
}

impl CandidateSet {
    /// Collects per-draw choices; `choices[j]` belongs to draw `j + 1`.
    pub fn from_choices(params: CandidateParams, choices: &[Vec<NoiseChoice>], warnings: Vec<DrawWarning>) -> Self {
        let mut merged: BTreeMap<(usize, Support), Vec<Origin>> = BTreeMap::new();
        for (j, per_xi) in choices.iter().enumerate() {
            for c in per_xi {
                let lambda = c.lambda.is_finite().then_some(c.lambda);
                merged
                    .entry((c.support.len(), c.support.clone()))
                    .or_default()
                    .push(Origin { draw: j + 1, xi: c.xi, lambda });
            }
        }
        let (models, provenance) = merged.into_iter().map(|((_, s), o)| (s, o)).unzip();
        Self { params, models, provenance, warnings }
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn contains(&self, tau: &Support) -> bool {
        self.models.iter().any(|m| m == tau)
    }

    /// Checks that every model is unique, within the sparsity bound, and inside `1..=p`.
    pub fn validate(&self, p: usize) -> Result<()> {
        for (i, m) in self.models.iter().enumerate() {
            if m.len() > self.params.s_u {
                return Err(ReproError::InvalidInput(format!("model {m} exceeds s_u={}", self.params.s_u)));
            }
            if m.max_index().is_some_and(|k| k >= p) {
                return Err(ReproError::InvalidInput(format!("model {m} has a column beyond p={p}")));
            }
            if self.models[..i].contains(m) {
                return Err(ReproError::InvalidInput(format!("model {m} listed twice")));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CandidateSetDoc {
    params: CandidateParams,
    models: Vec<Support>,
    provenance: BTreeMap<String, Vec<Origin>>,
    #[serde(default)]
    warnings: Vec<DrawWarning>,
}

fn support_key(s: &Support) -> String {
    s.one_based().iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

impl From<CandidateSet> for CandidateSetDoc {
    fn from(c: CandidateSet) -> Self {
        let provenance = c.models.iter().map(support_key).zip(c.provenance).collect();
        Self { params: c.params, models: c.models, provenance, warnings: c.warnings }
    }
}

impl TryFrom<CandidateSetDoc> for CandidateSet {
    type Error = String;

    fn try_from(mut doc: CandidateSetDoc) -> std::result::Result<Self, String> {
        let provenance = doc
            .models
            .iter()
            .map(|m| doc.provenance.remove(&support_key(m)).unwrap_or_default())
            .collect();
        Ok(Self { params: doc.params, models: doc.models, provenance, warnings: doc.warnings })
    }
}

/// Builds the candidate set from `d` standard-logistic repro noises.
///
/// Draw `j` uses its own substream, so the set for `d` is contained in the set for any
/// larger `d` with the same seed. Failed draws become warnings; the build fails only when
/// every draw fails.
pub fn build_candidate_set(
    data: &Dataset,
    d: usize,
    s_u: usize,
    loss: SurrogateLoss,
    xi_grid: &[f64],
    seed: u64,
) -> Result<CandidateSet> {
    if d == 0 {
        return Err(ReproError::InvalidInput("need at least one repro draw (d >= 1)".into()));
    }
    check_selection_args(s_u, xi_grid)?;
    let ctx = AugmentedContext::new(data, RIDGE_FOLDS.min(data.n()))?;
    let results = crate::par_map(d, |j| {
        let eps = logistic_noise(data.n(), seed, j);
        candidate_for_noise_in(&ctx, &eps, loss, s_u, xi_grid)
    });
    let mut choices = Vec::with_capacity(d);
    let mut warnings = Vec::new();
    let mut first_error = None;
    for (j, r) in results.into_iter().enumerate() {
        match r {
            Ok(c) => choices.push(c),
            Err(e) => {
                log::warn!("repro draw {} failed: {e}", j + 1);
                warnings.push(DrawWarning { draw: j + 1, message: e.to_string() });
                first_error.get_or_insert(e);
                choices.push(Vec::new());
            }
        }
    }
    if warnings.len() == d {
        return Err(first_error.expect("at least one failure recorded"));
    }
    let params = CandidateParams { d, s_u, loss, seed, xi_grid: xi_grid.to_vec() };
    Ok(CandidateSet::from_choices(params, &choices, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ebic_terms_match_log_gamma_values() {
        let s = EbicScore::with_terms(0.0, 4, 500, 1000, 1.0);
        assert!((s.complexity_term - 4.0 * 500f64.ln()).abs() < 1e-12);
        assert!((s.total() - s.complexity_term - s.combinatorial_term).abs() < 1e-12);
    }

    #[test]
    fn provenance_survives_json() {
        let params = CandidateParams { d: 2, s_u: 3, loss: SurrogateLoss::Hinge, seed: 1, xi_grid: vec![0.0] };
        let a = NoiseChoice { xi: 0.0, lambda: 1.5, support: Support::new(vec![0, 2]) };
        let b = NoiseChoice { xi: 0.0, lambda: f64::NAN, support: Support::empty() };
        let set = CandidateSet::from_choices(params, &[vec![a], vec![b]], Vec::new());
        assert_eq!(set.models[0], Support::empty());
        let json = serde_json::to_string(&set).unwrap();
        assert!(json.contains("\"1,3\""));
        let back: CandidateSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
    }
}
