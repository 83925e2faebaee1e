//! Working GLM: data containers, link functions, the mean log-likelihood with its
//! derivatives, and the low-dimensional quasi-MLE.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{ReproError, Result};

/// Observed design matrix and binary response.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: Vec<f64>) -> Result<Self> {
        let (n, p) = x.shape();
        if n < 2 || p < 1 {
            return Err(ReproError::InvalidInput(format!(
                "dataset needs n >= 2 and p >= 1, got n={n}, p={p}"
            )));
        }
        if y.len() != n {
            return Err(ReproError::InvalidInput(format!(
                "response has {} entries but design has {n} rows",
                y.len()
            )));
        }
        if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(ReproError::InvalidInput(format!("response value {v} is not 0/1")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ReproError::InvalidInput("design contains non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    /// Builds a dataset from row-major rows.
    pub fn from_rows(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(ReproError::InvalidInput("ragged design rows".into()));
        }
        Self::new(DMatrix::from_fn(n, p, |i, k| rows[i][k]), y)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Contiguous column `k` of the design.
    pub fn column(&self, k: usize) -> &[f64] {
        let n = self.n();
        &self.x.as_slice()[k * n..(k + 1) * n]
    }

    /// Same design, different response.
    pub fn with_response(&self, y: Vec<f64>) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }

    pub fn has_both_classes(&self) -> bool {
        let ones = self.y.iter().filter(|&&v| v == 1.0).count();
        ones > 0 && ones < self.n()
    }

    /// Columns `tau` of the design as an `n x |tau|` matrix.
    pub fn design_on(&self, tau: &Support) -> DMatrix<f64> {
        self.x.select_columns(tau.as_slice())
    }
}

/// A model support: strictly increasing, 0-based column indices.
///
/// Serialized with 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Support(Vec<usize>);

impl Support {
    pub fn new(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        Self(indices)
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    /// From 1-based indices, checking the range `1..=p`.
    pub fn from_one_based(indices: &[usize], p: usize) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i == 0 || i > p) {
            return Err(ReproError::InvalidInput(format!(
                "column index {bad} outside 1..={p}"
            )));
        }
        Ok(Self::new(indices.iter().map(|i| i - 1).collect()))
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|i| i + 1).collect()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, k: usize) -> bool {
        self.0.binary_search(&k).is_ok()
    }

    pub fn position(&self, k: usize) -> Option<usize> {
        self.0.binary_search(&k).ok()
    }

    pub fn is_subset_of(&self, other: &Support) -> bool {
        self.0.iter().all(|&k| other.contains(k))
    }

    pub fn max_index(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl std::fmt::Display for Support {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let items: Vec<String> = self.one_based().iter().map(ToString::to_string).collect();
        write!(f, "{{{}}}", items.join(","))
    }
}

impl Serialize for Support {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Support {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: Vec<usize> = Vec::deserialize(d)?;
        if raw.contains(&0) {
            return Err(serde::de::Error::custom("support indices are 1-based"));
        }
        if raw.windows(2).any(|w| w[0] >= w[1]) {
            return Err(serde::de::Error::custom("support indices must be strictly increasing"));
        }
        Ok(Support(raw.into_iter().map(|i| i - 1).collect()))
    }
}

/// `theta = (tau, beta_tau)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingModel {
    pub tau: Support,
    pub beta: Vec<f64>,
}

impl WorkingModel {
    pub fn new(tau: Support, beta: Vec<f64>) -> Result<Self> {
        if tau.len() != beta.len() {
            return Err(ReproError::InvalidInput(format!(
                "support has {} indices but {} coefficients",
                tau.len(),
                beta.len()
            )));
        }
        Ok(Self { tau, beta })
    }

    pub fn zeros(tau: Support) -> Self {
        let beta = vec![0.0; tau.len()];
        Self { tau, beta }
    }

    /// Coefficients embedded in a length-`p` vector, zero off the support.
    pub fn full_beta(&self, p: usize) -> Vec<f64> {
        let mut full = vec![0.0; p];
        for (&k, &b) in self.tau.as_slice().iter().zip(&self.beta) {
            full[k] = b;
        }
        full
    }

    fn check_against(&self, data: &Dataset) -> Result<()> {
        if self.tau.len() != self.beta.len() {
            return Err(ReproError::InvalidInput("support/coefficients length mismatch".into()));
        }
        if let Some(k) = self.tau.max_index() {
            if k >= data.p() {
                return Err(ReproError::InvalidInput(format!(
                    "support index {} exceeds p={}",
                    k + 1,
                    data.p()
                )));
            }
        }
        Ok(())
    }

    /// Linear predictor `X_tau beta_tau` for every observation.
    pub fn linear_predictor(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.check_against(data)?;
        let mut z = vec![0.0; data.n()];
        for (&k, &b) in self.tau.as_slice().iter().zip(&self.beta) {
            if b != 0.0 {
                for (zi, xi) in z.iter_mut().zip(data.column(k)) {
                    *zi += b * xi;
                }
            }
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(ReproError::Numeric("non-finite linear predictor".into()));
        }
        Ok(z)
    }
}

/// Link function `g`, strictly increasing on (0,1) with `g(1/2) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    #[default]
    Logit,
}

impl Link {
    pub fn link(self, prob: f64) -> Result<f64> {
        match self {
            Link::Logit => link_logit(prob),
        }
    }

    pub fn inverse(self, z: f64) -> f64 {
        match self {
            Link::Logit => inv_logit(z),
        }
    }

    /// Per-observation log-likelihood `y log(eta/(1-eta)) + log(1-eta)` at `eta = g^{-1}(z)`.
    fn loglik_term(self, y: f64, z: f64) -> f64 {
        match self {
            Link::Logit => y * z - softplus(z),
        }
    }

    /// Derivative of the log-likelihood term with respect to `z`.
    fn score(self, y: f64, z: f64) -> f64 {
        match self {
            Link::Logit => y - inv_logit(z),
        }
    }

    /// Negative second derivative with respect to `z` (non-negative).
    fn curvature(self, z: f64) -> f64 {
        match self {
            Link::Logit => {
                let e = inv_logit(z);
                e * (1.0 - e)
            }
        }
    }
}

pub fn link_logit(prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(ReproError::Domain(format!("logit undefined at {prob}")));
    }
    if prob == 0.5 {
        return Ok(0.0);
    }
    Ok((prob / (1.0 - prob)).ln())
}

pub fn inv_logit(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean log-likelihood of the working GLM over all observations.
pub fn loglik(data: &Dataset, model: &WorkingModel) -> Result<f64> {
    loglik_with(Link::Logit, data, model)
}

pub fn loglik_with(link: Link, data: &Dataset, model: &WorkingModel) -> Result<f64> {
    let z = model.linear_predictor(data)?;
    let total: f64 = data.y().iter().zip(&z).map(|(&y, &zi)| link.loglik_term(y, zi)).sum();
    Ok(total / data.n() as f64)
}

/// Gradient of the mean log-likelihood with respect to `beta_tau`.
pub fn loglik_grad(data: &Dataset, model: &WorkingModel) -> Result<Vec<f64>> {
    let link = Link::Logit;
    let z = model.linear_predictor(data)?;
    let n = data.n() as f64;
    let resid: Vec<f64> = data.y().iter().zip(&z).map(|(&y, &zi)| link.score(y, zi)).collect();
    Ok(model
        .tau
        .as_slice()
        .iter()
        .map(|&k| dot(data.column(k), &resid) / n)
        .collect())
}

/// Hessian of the mean log-likelihood (negative semidefinite).
pub fn loglik_hess(data: &Dataset, model: &WorkingModel) -> Result<DMatrix<f64>> {
    let z = model.linear_predictor(data)?;
    Ok(hessian_at(data, &model.tau, &z))
}

fn hessian_at(data: &Dataset, tau: &Support, z: &[f64]) -> DMatrix<f64> {
    let link = Link::Logit;
    let n = data.n();
    let xt = data.design_on(tau);
    let mut weighted = xt.clone();
    for i in 0..n {
        let w = link.curvature(z[i]);
        weighted.row_mut(i).scale_mut(w);
    }
    -(xt.transpose() * weighted) / n as f64
}

/// Per-observation score vectors `(y_i - eta_i) X_{i,tau}` as rows of an `n x |tau|` matrix.
pub fn observation_scores(data: &Dataset, model: &WorkingModel) -> Result<DMatrix<f64>> {
    let link = Link::Logit;
    let z = model.linear_predictor(data)?;
    let mut xt = data.design_on(&model.tau);
    for i in 0..data.n() {
        let r = link.score(data.y()[i], z[i]);
        xt.row_mut(i).scale_mut(r);
    }
    Ok(xt)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Controls for [`fit_quasi_mle_with`].
#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Coefficient norm beyond which the fit is declared separated.
    pub norm_bound: f64,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self { max_iter: 200, grad_tol: 1e-8, norm_bound: 1e4 }
    }
}

/// Maximizer of the working-GLM log-likelihood restricted to `tau`.
pub fn fit_quasi_mle(data: &Dataset, tau: &Support) -> Result<WorkingModel> {
    fit_quasi_mle_with(data, tau, MleOptions::default())
}

/// Newton iterations with step halving on the concave mean log-likelihood.
pub fn fit_quasi_mle_with(data: &Dataset, tau: &Support, opts: MleOptions) -> Result<WorkingModel> {
    let k = tau.len();
    if k >= data.n() {
        return Err(ReproError::InvalidInput(format!(
            "support size {k} must be below n={}",
            data.n()
        )));
    }
    if !data.has_both_classes() {
        return Err(ReproError::Degenerate("response has a single class".into()));
    }
    let mut model = WorkingModel::zeros(tau.clone());
    model.check_against(data)?;
    if k == 0 {
        return Ok(model);
    }

    let mut current = loglik(data, &model)?;
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let grad = loglik_grad(data, &model)?;
        if grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())) <= opts.grad_tol {
            converged = true;
            break;
        }
        let neg_hess = -loglik_hess(data, &model)?;
        let step = match neg_hess.clone().cholesky() {
            Some(ch) => ch.solve(&DVector::from_vec(grad.clone())),
            None => {
                // Hessian lost definiteness numerically; fall back to a damped system.
                let reg = neg_hess + DMatrix::identity(k, k) * 1e-10;
                reg.cholesky()
                    .ok_or_else(|| ReproError::Numeric("singular Hessian in Newton step".into()))?
                    .solve(&DVector::from_vec(grad.clone()))
            }
        };

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> =
                model.beta.iter().zip(step.iter()).map(|(b, s)| b + t * s).collect();
            let trial_model = WorkingModel { tau: tau.clone(), beta: trial };
            if let Ok(val) = loglik(data, &trial_model) {
                if val >= current - 1e-15 * current.abs().max(1.0) {
                    model = trial_model;
                    current = val;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent possible along the Newton direction: stationary to machine precision.
            converged = true;
            break;
        }
        let norm = model.beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > opts.norm_bound {
            return Err(ReproError::Separation(format!(
                "coefficient norm {norm:.3e} exceeds {:.1e} on support {tau}",
                opts.norm_bound
            )));
        }
    }
    if !converged {
        return Err(ReproError::Separation(format!(
            "quasi-MLE on support {tau} did not converge in {} iterations",
            opts.max_iter
        )));
    }

    // A finite maximizer must leave at least one observation on the wrong side;
    // perfect classification means the likelihood keeps increasing along beta.
    let z = model.linear_predictor(data)?;
    let separated = data
        .y()
        .iter()
        .zip(&z)
        .all(|(&y, &zi)| (2.0 * y - 1.0) * zi > 0.0);
    if separated {
        return Err(ReproError::Separation(format!(
            "support {tau} separates the classes completely"
        )));
    }
    let neg_hess = -hessian_at(data, tau, &z);
    if neg_hess.cholesky().is_none() {
        return Err(ReproError::Numeric(format!("singular Hessian at the MLE on {tau}")));
    }
    Ok(model)
}
