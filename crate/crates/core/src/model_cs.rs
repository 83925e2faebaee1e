//! Model confidence sets: for each candidate support, simulate the distribution of the
//! L1-path model selector under the fitted working model and keep the support unless the
//! observed selection is unusually rare.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Open01};
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::coef::SkippedModel;
use crate::error::{ReproError, Result};
use crate::glm::{fit_quasi_mle, Dataset, Support, WorkingModel};
use crate::rng::{derive_seed, hash_indices, substream, Purpose};
use crate::solvers::select_model;

/// Levels on each selector path.
pub const SELECTOR_GRID_SIZE: usize = 50;

/// Default Nelder-Mead evaluation budget for the profile statistic.
pub const PROFILE_BUDGET: usize = 200;

/// What the selector returned on one synthetic response.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorOutcome {
    Selected(Support),
    /// The path solver failed; matches no support.
    Failed,
}

/// Empirical distribution of the selector over `m` synthetic responses.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectorDistribution {
    pub theta: WorkingModel,
    pub m: usize,
    pub counts: BTreeMap<SelectorOutcome, usize>,
}

impl SelectorDistribution {
    pub fn from_outcomes(theta: WorkingModel, outcomes: impl IntoIterator<Item = SelectorOutcome>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        let mut m = 0;
        for o in outcomes {
            *counts.entry(o).or_insert(0) += 1;
            m += 1;
        }
        if m == 0 {
            return Err(ReproError::InvalidInput("selector distribution needs at least one draw".into()));
        }
        Ok(Self { theta, m, counts })
    }

    pub fn count(&self, tau: &Support) -> usize {
        self.counts.get(&SelectorOutcome::Selected(tau.clone())).copied().unwrap_or(0)
    }

    pub fn probability(&self, tau: &Support) -> f64 {
        self.count(tau) as f64 / self.m as f64
    }

    /// `(outcome, count / m)` pairs; the probabilities sum to one.
    pub fn probabilities(&self) -> impl Iterator<Item = (&SelectorOutcome, f64)> {
        self.counts.iter().map(|(o, &c)| (o, c as f64 / self.m as f64))
    }
}

/// `Y*_i = 1{X_{i,tau}' beta_tau - logit(u_i) > 0}` from the given uniform stream.
fn synthetic_response(eta: &[f64], rng: &mut impl rand::Rng) -> Vec<f64> {
    eta.iter()
        .map(|&z| {
            let u: f64 = Open01.sample(rng);
            let eps = -(u / (1.0 - u)).ln();
            if z + eps > 0.0 {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Selector distribution under `theta`; `data` supplies the design (its response is unused).
///
/// Draw `j` uses substream `(seed, j)`, so repeated calls with one seed share noises.
pub fn simulate_selector_distribution(
    data: &Dataset,
    theta: &WorkingModel,
    m: usize,
    size_cap: usize,
    seed: u64,
) -> Result<SelectorDistribution> {
    if m == 0 {
        return Err(ReproError::InvalidInput("need at least one draw (m >= 1)".into()));
    }
    let eta = theta.linear_predictor(data)?;
    let outcomes = crate::par_map(m, |j| {
        if size_cap == 0 {
            // the first path point is always empty
            return SelectorOutcome::Selected(Support::empty());
        }
        let mut rng = substream(seed, Purpose::SelectorNoise, j as u64);
        let y = synthetic_response(&eta, &mut rng);
        match data.with_response(y).and_then(|d| select_model(&d, size_cap, SELECTOR_GRID_SIZE)) {
            Ok(s) => SelectorOutcome::Selected(s),
            Err(_) => SelectorOutcome::Failed,
        }
    });
    SelectorDistribution::from_outcomes(theta.clone(), outcomes)
}

/// `(1/m) #{j : P(tau_j) > P(tau_obs)}` with strict inequality.
pub fn nuclear_stat(dist: &SelectorDistribution, observed: &Support) -> f64 {
    let c_obs = dist.count(observed);
    let exceed: usize = dist.counts.values().filter(|&&c| c > c_obs).sum();
    exceed as f64 / dist.m as f64
}

/// How the coefficients of a candidate support are fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NuisanceMode {
    /// Plug in the quasi-MLE.
    Mle,
    /// Minimize the statistic over the coefficients.
    Profile,
}

impl std::str::FromStr for NuisanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mle" => Ok(NuisanceMode::Mle),
            "profile" => Ok(NuisanceMode::Profile),
            other => Err(format!("unknown nuisance mode '{other}' (expected mle or profile)")),
        }
    }
}

/// Seed of the noise substreams for candidate `tau`: independent across supports.
pub fn candidate_seed(seed: u64, tau: &Support) -> u64 {
    derive_seed(seed, Purpose::SelectorNoise, hash_indices(tau.as_slice()))
}

/// One tested candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestedModel {
    pub tau: Support,
    #[serde(rename = "T_hat")]
    pub t_hat: f64,
    pub beta_used: Vec<f64>,
}

/// Candidates kept at level `alpha`, with the rejected and untestable ones for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfidenceSet {
    pub alpha: f64,
    pub m: usize,
    pub mode: NuisanceMode,
    /// Retained models.
    pub models: Vec<TestedModel>,
    pub rejected: Vec<TestedModel>,
    pub excluded: Vec<SkippedModel>,
}

impl ModelConfidenceSet {
    pub fn contains(&self, tau: &Support) -> bool {
        self.models.iter().any(|t| &t.tau == tau)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Re-thresholds the tested models at another level.
    pub fn at_level(&self, alpha: f64) -> Self {
        let (kept, dropped): (Vec<_>, Vec<_>) =
            self.models.iter().chain(&self.rejected).cloned().partition(|t| t.t_hat < alpha);
        let mut out = Self { alpha, models: kept, rejected: dropped, ..self.clone() };
        out.canonicalize();
        out
    }

    /// Orders models by size, then lexicographically.
    fn canonicalize(&mut self) {
        let key = |t: &TestedModel| (t.tau.len(), t.tau.clone());
        self.models.sort_by_key(key);
        self.rejected.sort_by_key(key);
    }
}

/// Statistic of `tau` at coefficients `beta` against the observed selection.
fn statistic_at(data: &Dataset, tau: &Support, beta: &[f64], observed: &Support, m: usize, seed: u64) -> Result<f64> {
    let theta = WorkingModel::new(tau.clone(), beta.to_vec())?;
    let dist = simulate_selector_distribution(data, &theta, m, tau.len(), seed)?;
    Ok(nuclear_stat(&dist, observed))
}

/// Profile statistic: Nelder-Mead over `beta_tau` from the quasi-MLE, reusing one set of
/// noises for every evaluation. Returns the best point found and its statistic.
pub fn profile_nuclear(data: &Dataset, tau: &Support, m: usize, seed: u64, budget: usize) -> Result<(Vec<f64>, f64)> {
    if budget == 0 {
        return Err(ReproError::InvalidInput("profile budget must be at least 1".into()));
    }
    let start = fit_quasi_mle(data, tau)?;
    let observed = select_model(data, tau.len(), SELECTOR_GRID_SIZE)?;
    let cseed = candidate_seed(seed, tau);
    let objective = |b: &[f64]| statistic_at(data, tau, b, &observed, m, cseed);
    nelder_mead(objective, &start.beta, budget)
}

/// Derivative-free simplex minimization within `budget` evaluations.
fn nelder_mead(mut f: impl FnMut(&[f64]) -> Result<f64>, x0: &[f64], budget: usize) -> Result<(Vec<f64>, f64)> {
    let k = x0.len();
    let f0 = f(x0)?;
    let mut evals = 1;
    if k == 0 || budget == 1 {
        return Ok((x0.to_vec(), f0));
    }
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..k {
        if evals >= budget {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += 0.1 * x0[i].abs().max(1.0);
        let fx = f(&x)?;
        evals += 1;
        simplex.push((x, fx));
    }
    if simplex.len() < k + 1 {
        return Ok(best_of(simplex));
    }
    let order = |s: &mut Vec<(Vec<f64>, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    let along = |a: &[f64], b: &[f64], t: f64| a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect::<Vec<f64>>();
    while evals < budget {
        order(&mut simplex);
        let centroid: Vec<f64> =
            (0..k).map(|c| simplex[..k].iter().map(|(x, _)| x[c]).sum::<f64>() / k as f64).collect();
        let worst = simplex[k].clone();
        let reflected = along(&centroid, &worst.0, -1.0);
        let fr = f(&reflected)?;
        evals += 1;
        if fr < simplex[0].1 {
            if evals >= budget {
                simplex[k] = (reflected, fr);
                break;
            }
            let expanded = along(&centroid, &worst.0, -2.0);
            let fe = f(&expanded)?;
            evals += 1;
            simplex[k] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (reflected, fr);
        } else {
            if evals >= budget {
                break;
            }
            let contracted = if fr < worst.1 { along(&centroid, &reflected, 0.5) } else { along(&centroid, &worst.0, 0.5) };
            let fc = f(&contracted)?;
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[k] = (contracted, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    if evals >= budget {
                        break;
                    }
                    let x = along(&best, &v.0, 0.5);
                    let fx = f(&x)?;
                    evals += 1;
                    *v = (x, fx);
                }
            }
        }
    }
    // the start point wins ties, so the result is never worse than the quasi-MLE
    let (x, fx) = best_of(simplex);
    Ok(if fx < f0 { (x, fx) } else { (x0.to_vec(), f0) })
}

fn best_of(simplex: Vec<(Vec<f64>, f64)>) -> (Vec<f64>, f64) {
    simplex.into_iter().min_by(|a, b| a.1.total_cmp(&b.1)).expect("nonempty simplex")
}

/// Tests every candidate at level `alpha` with `m` synthetic responses each.
pub fn model_confidence_set(
    data: &Dataset,
    cand: &CandidateSet,
    alpha: f64,
    m: usize,
    mode: NuisanceMode,
    seed: u64,
) -> Result<ModelConfidenceSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReproError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m == 0 {
        return Err(ReproError::InvalidInput("need at least one draw (m >= 1)".into()));
    }
    cand.validate(data.p())?;
    // observed selections depend only on the cap
    let caps: Vec<usize> = {
        let mut c: Vec<usize> = cand.models.iter().map(Support::len).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let observed: Vec<Result<Support>> = crate::par_map(caps.len(), |i| select_model(data, caps[i], SELECTOR_GRID_SIZE));
    let observed: BTreeMap<usize, Result<Support>> = caps.into_iter().zip(observed).collect();

    let tested = crate::par_map(cand.len(), |i| -> Result<TestedModel> {
        let tau = &cand.models[i];
        let obs = observed[&tau.len()].clone()?;
        let cseed = candidate_seed(seed, tau);
        let (beta, t_hat) = match mode {
            NuisanceMode::Mle => {
                let beta = fit_quasi_mle(data, tau)?.beta;
                let t = statistic_at(data, tau, &beta, &obs, m, cseed)?;
                (beta, t)
            }
            NuisanceMode::Profile => profile_nuclear(data, tau, m, seed, PROFILE_BUDGET)?,
        };
        Ok(TestedModel { tau: tau.clone(), t_hat, beta_used: beta })
    });
    let mut models = Vec::new();
    let mut rejected = Vec::new();
    let mut excluded = Vec::new();
    for (tau, t) in cand.models.iter().zip(tested) {
        match t {
            Ok(t) if t.t_hat < alpha => models.push(t),
            Ok(t) => rejected.push(t),
            Err(e) => {
                log::warn!("excluding model {tau}: {e}");
                excluded.push(SkippedModel { tau: tau.clone(), reason: e.to_string() });
            }
        }
    }
    let mut out = ModelConfidenceSet { alpha, m, mode, models, rejected, excluded };
    out.canonicalize();
    Ok(out)
}
