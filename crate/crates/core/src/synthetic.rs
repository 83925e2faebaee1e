//! Simulation designs M1-M4, the AR(1) Gaussian design, responses `y = 1{mu(X) > U}`,
//! and Monte-Carlo population targets `(s, tau0, beta0)`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ReproError, Result};
use crate::glm::{fit_quasi_mle, inv_logit, link_logit, loglik, Dataset, Support, WorkingModel};
use crate::rng::{derive_seed, substream, Purpose};
use crate::special::{ln_binomial, normal_cdf};

/// Lag-one correlation of the design; `Sigma_ij = RHO^|i-j|`.
pub const RHO: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimModel {
    M1,
    M2,
    M3,
    M4,
}

impl SimModel {
    pub fn name(self) -> &'static str {
        match self {
            SimModel::M1 => "M1",
            SimModel::M2 => "M2",
            SimModel::M3 => "M3",
            SimModel::M4 => "M4",
        }
    }

    /// Whether the sparse logistic working model is the true data-generating model.
    pub fn well_specified(self) -> bool {
        matches!(self, SimModel::M3 | SimModel::M4)
    }
}

impl std::str::FromStr for SimModel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(SimModel::M1),
            "M2" => Ok(SimModel::M2),
            "M3" => Ok(SimModel::M3),
            "M4" => Ok(SimModel::M4),
            other => Err(format!("unknown design '{other}' (expected M1..M4)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub d_default: usize,
    pub gamma: Vec<f64>,
    pub omega: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SimDesign {
    /// The design at its published size.
    pub fn standard(model: SimModel) -> Self {
        let (n, d) = match model {
            SimModel::M4 => (900, 10_000),
            _ => (500, 5000),
        };
        Self::with_size(model, n, 1000, d)
    }

    pub fn with_size(model: SimModel, n: usize, p: usize, d_default: usize) -> Self {
        let gamma = (0..p)
            .map(|k| match k {
                0 => 5.0,
                1 => 4.0,
                2 => 3.0,
                3 => 2.5,
                _ if k % 2 == 0 => 0.1,
                _ => -0.1,
            })
            .collect();
        let omega = (0..p).map(|k| if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let lead: &[f64] = match model {
            SimModel::M4 => &[5.0, 4.0, 3.0, 1.0],
            _ => &[5.0, 4.0, 3.0, 2.5],
        };
        let beta = (0..p).map(|k| lead.get(k).copied().unwrap_or(0.0)).collect();
        Self { model, n, p, d_default, gamma, omega, beta }
    }

    /// True `(tau0, beta0)` for the well-specified designs.
    pub fn true_model(&self) -> Option<WorkingModel> {
        if !self.model.well_specified() {
            return None;
        }
        let tau: Vec<usize> = (0..self.p).filter(|&k| self.beta[k] != 0.0).collect();
        let beta = tau.iter().map(|&k| self.beta[k]).collect();
        Some(WorkingModel { tau: Support::new(tau), beta })
    }

    pub fn mean(&self, row: &[f64]) -> f64 {
        mean_function(self, row)
    }
}

/// `n x p` design with i.i.d. `N(0, Sigma)` rows, generated by the exact AR(1) recursion.
pub fn gen_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, Purpose::Design, 0);
    let innov = (1.0 - RHO * RHO).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev = 0.0;
        for k in 0..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = if k == 0 { z } else { RHO * prev + innov * z };
            x[(i, k)] = prev;
        }
    }
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `mu(X)` for one design row.
pub fn mean_function(design: &SimDesign, row: &[f64]) -> f64 {
    match design.model {
        SimModel::M1 => {
            let g = inv_logit(dot(row, &design.gamma));
            0.5 + 0.95 * (g - 0.5) + 0.05 * (normal_cdf(dot(row, &design.omega)) - 0.5)
        }
        SimModel::M2 => {
            let g = inv_logit(dot(row, &design.gamma));
            let w = dot(row, &design.omega);
            let wiggle = if g >= 0.5 { w.sin() } else { (5.0 * w).sin() };
            (g + 0.2 * (g - 0.5).abs() * wiggle).clamp(0.0, 1.0)
        }
        SimModel::M3 | SimModel::M4 => inv_logit(dot(row, &design.beta)),
    }
}

pub fn mean_vector(design: &SimDesign, x: &DMatrix<f64>) -> Vec<f64> {
    let mut row = vec![0.0; x.ncols()];
    (0..x.nrows())
        .map(|i| {
            row.iter_mut().enumerate().for_each(|(k, r)| *r = x[(i, k)]);
            mean_function(design, &row)
        })
        .collect()
}

/// `y_i = 1{mu_i > u_i}` with `u_i ~ Unif[0, 1)`; returns `(y, u)`.
pub fn gen_response(mu: &[f64], seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = substream(seed, Purpose::Response, 0);
    let u: Vec<f64> = mu.iter().map(|_| rng.random::<f64>()).collect();
    let y = mu.iter().zip(&u).map(|(&m, &ui)| if m > ui { 1.0 } else { 0.0 }).collect();
    (y, u)
}

/// Working noise `eps_i = -g(u_i)` of a well-specified design (`Delta = 0`).
pub fn working_noise(u: &[f64]) -> Result<Vec<f64>> {
    u.iter().map(|&ui| link_logit(ui).map(|z| -z)).collect()
}

/// One simulated dataset with its realized uniforms.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: Dataset,
    pub mu: Vec<f64>,
    pub u: Vec<f64>,
}

/// Draws `(X, y)` at the design's size. Design and response use separate substreams of `seed`.
pub fn simulate(design: &SimDesign, seed: u64) -> Result<Simulated> {
    simulate_n(design, design.n, seed)
}

pub fn simulate_n(design: &SimDesign, n: usize, seed: u64) -> Result<Simulated> {
    let x = gen_design(n, design.p, derive_seed(seed, Purpose::Design, 1));
    let mu = mean_vector(design, &x);
    let (y, u) = gen_response(&mu, derive_seed(seed, Purpose::Response, 1));
    Ok(Simulated { data: Dataset::new(x, y)?, mu, u })
}

/// One forward-stepwise step in the population target search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub tau: Support,
    pub beta: Vec<f64>,
    /// Monte-Carlo estimate of `E l(tau, beta_tau | X, Y)`.
    pub mean_loglik: f64,
    /// Population EBIC at the observed sample size.
    pub ebic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTarget {
    pub s: usize,
    pub tau0: Support,
    pub beta0: Vec<f64>,
    pub n_mc: usize,
    pub steps: Vec<StepRecord>,
}

/// Number of highest-scoring columns refitted exactly at each stepwise step.
const STEPWISE_SCREEN: usize = 5;

/// Population `(s, tau0, beta0)`: forward stepwise logistic regression on `n_mc` draws, then
/// the size minimizing `-2 n E l + |tau| log n + 2 log C(p, |tau|)` with `n = design.n`.
pub fn population_targets(design: &SimDesign, s_u: usize, n_mc: usize, seed: u64) -> Result<PopulationTarget> {
    if n_mc < 1000 {
        return Err(ReproError::InvalidInput(format!("n_mc must be at least 1000, got {n_mc}")));
    }
    if s_u == 0 || s_u > design.p {
        return Err(ReproError::InvalidInput(format!("s_u={s_u} must lie in [1, p={}]", design.p)));
    }
    let sim = simulate_n(design, n_mc, derive_seed(seed, Purpose::Population, 0))?;
    let data = &sim.data;
    let n_obs = design.n as f64;
    let p = design.p;
    let ebic = |k: usize, ll: f64| -2.0 * n_obs * ll + k as f64 * n_obs.ln() + 2.0 * ln_binomial(p, k);

    let empty = WorkingModel::zeros(Support::empty());
    let ll0 = loglik(data, &empty)?;
    let mut steps = vec![StepRecord { tau: Support::empty(), beta: Vec::new(), mean_loglik: ll0, ebic: ebic(0, ll0) }];
    let mut current = empty;
    for size in 1..=s_u {
        // score screening at the current fit, then exact refits of the best few
        let z = current.linear_predictor(data)?;
        let resid: Vec<f64> = data.y().iter().zip(&z).map(|(y, &zi)| y - inv_logit(zi)).collect();
        let weight: Vec<f64> = z.iter().map(|&zi| inv_logit(zi) * (1.0 - inv_logit(zi))).collect();
        let mut scored: Vec<(usize, f64)> = (0..p)
            .filter(|k| !current.tau.contains(*k))
            .map(|k| {
                let col = data.column(k);
                let u = dot(col, &resid);
                let info: f64 = col.iter().zip(&weight).map(|(x, w)| w * x * x).sum();
                (k, u * u / info.max(f64::MIN_POSITIVE))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

        let mut best: Option<(WorkingModel, f64)> = None;
        for &(k, _) in scored.iter().take(STEPWISE_SCREEN) {
            let mut idx = current.tau.as_slice().to_vec();
            idx.push(k);
            let fit = fit_quasi_mle(data, &Support::new(idx))?;
            let ll = loglik(data, &fit)?;
            if best.as_ref().is_none_or(|(_, b)| ll > *b) {
                best = Some((fit, ll));
            }
        }
        let (fit, ll) = best.ok_or_else(|| ReproError::InvalidInput("no column left to add".into()))?;
        steps.push(StepRecord { tau: fit.tau.clone(), beta: fit.beta.clone(), mean_loglik: ll, ebic: ebic(size, ll) });
        current = fit;
        debug_assert_eq!(current.tau.len(), size);
    }
    let best = steps
        .iter()
        .enumerate()
        .fold(0, |b, (i, st)| if st.ebic < steps[b].ebic { i } else { b });
    let chosen = &steps[best];
    Ok(PopulationTarget {
        s: chosen.tau.len(),
        tau0: chosen.tau.clone(),
        beta0: chosen.beta.clone(),
        n_mc,
        steps: steps.clone(),
    })
}

/// Recovery loss `L^R_n(tau, beta, sigma | X, y, eps)`: fraction of responses not
/// reproduced by `1{X_tau' beta + sigma eps_i > 0}`.
pub fn recovery_loss(data: &Dataset, model: &WorkingModel, sigma: f64, eps: &[f64]) -> Result<f64> {
    if eps.len() != data.n() {
        return Err(ReproError::InvalidInput(format!("noise has {} entries, expected {}", eps.len(), data.n())));
    }
    let z = model.linear_predictor(data)?;
    let misses = z
        .iter()
        .zip(eps)
        .zip(data.y())
        .filter(|((&zi, &e), &y)| (zi + sigma * e > 0.0) != (y == 1.0))
        .count();
    Ok(misses as f64 / data.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_vectors_follow_the_designs() {
        let d = SimDesign::with_size(SimModel::M1, 10, 8, 1);
        assert_eq!(d.gamma, vec![5.0, 4.0, 3.0, 2.5, 0.1, -0.1, 0.1, -0.1]);
        assert_eq!(d.omega, vec![1.0, -1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0]);
        let d4 = SimDesign::with_size(SimModel::M4, 10, 6, 1);
        assert_eq!(d4.beta, vec![5.0, 4.0, 3.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn centered_means_at_origin() {
        for m in [SimModel::M1, SimModel::M2, SimModel::M3, SimModel::M4] {
            let d = SimDesign::with_size(m, 10, 6, 1);
            assert_eq!(mean_function(&d, &[0.0; 6]), 0.5);
        }
    }

    #[test]
    fn degenerate_means_give_constant_responses() {
        let (y, _) = gen_response(&[1.0; 50], 3);
        assert!(y.iter().all(|&v| v == 1.0));
        let (y, _) = gen_response(&[0.0; 50], 3);
        assert!(y.iter().all(|&v| v == 0.0));
    }
}
