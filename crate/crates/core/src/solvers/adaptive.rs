//! Noise-augmented surrogate fits: ridge initialization with cross-validated level and
//! the adaptive-L1 solution, both with a free scale `sigma` on the synthetic noise column.

use serde::{Deserialize, Serialize};

use crate::error::{ReproError, Result};
use crate::glm::{Dataset, Support};

use super::cd::{CdOptions, CdState, MarginProblem, Penalty, SignedDesign};
use super::loss::{SmoothLoss, SurrogateLoss};

/// Largest adaptive weight; equivalently ridge coefficients are floored at `1 / W_MAX`.
pub const W_MAX: f64 = 1e6;

/// Relative ridge levels (multiplied by `n`) searched by cross-validation.
const RIDGE_GRID: [f64; 6] = [10.0, 1.5848931924611136, 0.25118864315095796, 0.039810717055349734, 0.00630957344480193, 0.001];

const RIDGE_TOL: f64 = 1e-5;

/// Hinge smoothing inside the ridge initializer; wider than the selection fits for speed.
pub const RIDGE_SMOOTHING: f64 = 0.1;

/// Solution of the noise-augmented penalized surrogate problem at one `lambda`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedFit {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub support: Support,
    /// Penalized objective of the smoothed problem that was minimized.
    pub objective: f64,
    pub sweeps: usize,
}

impl AugmentedFit {
    fn from_state(state: &CdState, lambda: f64, objective: f64, sweeps: usize) -> Self {
        Self {
            beta: state.beta.clone(),
            sigma: state.sigma,
            lambda,
            support: Support::new(state.support()),
            objective,
            sweeps,
        }
    }

    /// `sum_i L((2y_i - 1)(X_i' beta + sigma eps_i))` with the exact (unsmoothed) loss.
    pub fn data_fit(&self, data: &Dataset, eps_star: &[f64], loss: SurrogateLoss) -> f64 {
        margins(data, eps_star, &self.beta, self.sigma).iter().map(|&m| loss.value(m)).sum()
    }
}

/// Ridge initializer `(beta_tilde, sigma_tilde)` with its selected level.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub lambda: f64,
    pub cv_scores: Vec<(f64, f64)>,
}

/// Margins `(2y_i - 1)(X_i' beta + sigma eps_i)`.
pub fn margins(data: &Dataset, eps_star: &[f64], beta: &[f64], sigma: f64) -> Vec<f64> {
    let mut z: Vec<f64> = eps_star.iter().map(|e| sigma * e).collect();
    for (k, &b) in beta.iter().enumerate() {
        if b != 0.0 {
            for (zi, xi) in z.iter_mut().zip(data.column(k)) {
                *zi += b * xi;
            }
        }
    }
    z.iter_mut().zip(data.y()).for_each(|(zi, &y)| *zi *= 2.0 * y - 1.0);
    z
}

/// Shared per-dataset precomputation: the signed design and its CV fold splits.
///
/// Building this once and reusing it across many noise vectors avoids redundant work.
#[derive(Debug, Clone)]
pub struct AugmentedContext<'a> {
    pub data: &'a Dataset,
    pub design: SignedDesign,
    /// Smoothing width of the hinge inside the ridge initializer.
    pub ridge_smoothing: f64,
    folds: Vec<FoldSplit>,
}

#[derive(Debug, Clone)]
struct FoldSplit {
    train_rows: Vec<usize>,
    valid_rows: Vec<usize>,
    train_design: SignedDesign,
}

impl<'a> AugmentedContext<'a> {
    pub fn new(data: &'a Dataset, folds: usize) -> Result<Self> {
        if folds < 2 {
            return Err(ReproError::InvalidInput(format!("need at least 2 folds, got {folds}")));
        }
        if folds > data.n() {
            return Err(ReproError::InvalidInput(format!("{folds} folds exceed n={}", data.n())));
        }
        if !data.has_both_classes() {
            return Err(ReproError::Degenerate("response has a single class".into()));
        }
        let folds = (0..folds)
            .map(|f| {
                // interleaved assignment: observation i belongs to fold i mod k
                let (valid_rows, train_rows): (Vec<usize>, Vec<usize>) =
                    (0..data.n()).partition(|i| i % folds == f);
                let train_design = SignedDesign::from_rows(data, &train_rows);
                FoldSplit { train_rows, valid_rows, train_design }
            })
            .collect();
        Ok(Self { data, design: SignedDesign::new(data), ridge_smoothing: RIDGE_SMOOTHING, folds })
    }

    fn ridge_loss(&self, loss: SurrogateLoss) -> SmoothLoss {
        match loss {
            SurrogateLoss::Hinge => SmoothLoss::HuberHinge { delta: self.ridge_smoothing },
            SurrogateLoss::Logistic => SmoothLoss::Logistic,
        }
    }

    fn check_noise(&self, eps_star: &[f64]) -> Result<()> {
        if eps_star.len() != self.data.n() {
            return Err(ReproError::InvalidInput(format!(
                "noise has {} entries, expected n={}",
                eps_star.len(),
                self.data.n()
            )));
        }
        if eps_star.iter().any(|e| !e.is_finite()) {
            return Err(ReproError::InvalidInput("noise contains non-finite entries".into()));
        }
        Ok(())
    }

    /// Ridge fit at a fixed level on all observations.
    pub fn fit_ridge(&self, eps_star: &[f64], loss: SurrogateLoss, lambda: f64) -> Result<RidgeFit> {
        self.check_noise(eps_star)?;
        let mut ridge = RidgeSolver::new(&self.design, eps_star, self.ridge_loss(loss));
        let (beta, sigma) = ridge.solve(lambda)?;
        Ok(RidgeFit { beta, sigma, lambda, cv_scores: Vec::new() })
    }

    /// Ridge fit with its level chosen by k-fold cross-validation on held-out surrogate loss.
    pub fn fit_ridge_cv(&self, eps_star: &[f64], loss: SurrogateLoss) -> Result<RidgeFit> {
        self.check_noise(eps_star)?;
        let n = self.data.n() as f64;
        let grid: Vec<f64> = RIDGE_GRID.iter().map(|r| r * n).collect();
        let mut scores = vec![0.0; grid.len()];

        for fold in &self.folds {
            let train_eps: Vec<f64> = fold.train_rows.iter().map(|&i| eps_star[i]).collect();
            let mut ridge = RidgeSolver::new(&fold.train_design, &train_eps, self.ridge_loss(loss));
            for (g, &lam) in grid.iter().enumerate() {
                let (beta, sigma) = ridge.solve(lam)?;
                let held_out: f64 = fold
                    .valid_rows
                    .iter()
                    .map(|&i| {
                        let mut z = sigma * eps_star[i];
                        for (k, &b) in beta.iter().enumerate() {
                            if b != 0.0 {
                                z += b * self.data.x()[(i, k)];
                            }
                        }
                        loss.value((2.0 * self.data.y()[i] - 1.0) * z)
                    })
                    .sum();
                scores[g] += held_out / n;
            }
        }
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (g, &s)| if s < scores[b] { g } else { b });
        let mut fit = self.fit_ridge(eps_star, loss, grid[best])?;
        fit.cv_scores = grid.into_iter().zip(scores).collect();
        Ok(fit)
    }

    /// Adaptive-L1 fit at one level.
    pub fn fit_adaptive_l1(
        &self,
        eps_star: &[f64],
        loss: SurrogateLoss,
        lambda: f64,
        weights: &[f64],
    ) -> Result<AugmentedFit> {
        self.fit_adaptive_l1_with(eps_star, loss, lambda, weights, CdOptions::default())
            .map(|(fit, _)| fit)
    }

    /// As [`Self::fit_adaptive_l1`], returning the per-sweep objective trace when requested.
    pub fn fit_adaptive_l1_with(
        &self,
        eps_star: &[f64],
        loss: SurrogateLoss,
        lambda: f64,
        weights: &[f64],
        opts: CdOptions,
    ) -> Result<(AugmentedFit, Vec<f64>)> {
        self.check_noise(eps_star)?;
        check_weights(weights, self.data.p())?;
        if !(lambda >= 0.0) {
            return Err(ReproError::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
        }
        let noise = self.design.signed_noise(eps_star);
        let problem = MarginProblem { design: &self.design, noise: Some(&noise), loss: loss.smooth() };
        let mut state = CdState::zeros(&self.design);
        let pen = Penalty { lambda, weights: Some(weights), ridge: 0.0 };
        let report = problem.solve(&mut state, &pen, opts)?;
        Ok((AugmentedFit::from_state(&state, lambda, report.objective, report.sweeps), report.trace))
    }

    /// Adaptive-L1 fits along a log-spaced grid from the smallest all-zero level down to
    /// `1e-3` of it, warm-started. Stops early once the support exceeds `stop_above`.
    pub fn adaptive_path(
        &self,
        eps_star: &[f64],
        loss: SurrogateLoss,
        weights: &[f64],
        grid_size: usize,
        stop_above: Option<usize>,
    ) -> Result<Vec<AugmentedFit>> {
        self.check_noise(eps_star)?;
        check_weights(weights, self.data.p())?;
        if grid_size < 2 {
            return Err(ReproError::InvalidInput("grid needs at least 2 points".into()));
        }
        let noise = self.design.signed_noise(eps_star);
        let problem = MarginProblem { design: &self.design, noise: Some(&noise), loss: loss.smooth() };

        // sigma alone at beta = 0 sets the entry level.
        let mut state = CdState::zeros(&self.design);
        let opts = CdOptions::default();
        let huge = Penalty { lambda: f64::MAX / 4.0, weights: None, ridge: 0.0 };
        problem.solve(&mut state, &huge, opts)?;
        let lambda_max = (0..self.data.p())
            .map(|k| problem.coordinate_gradient(&state, k).abs() / weights[k])
            .fold(0.0_f64, f64::max);
        if lambda_max == 0.0 {
            let pen = Penalty { lambda: 0.0, weights: Some(weights), ridge: 0.0 };
            let obj = problem.objective(&state, &pen);
            return Ok(vec![AugmentedFit::from_state(&state, 0.0, obj, 0)]);
        }

        let mut fits = Vec::with_capacity(grid_size);
        for lambda in log_grid(lambda_max, 1e-3, grid_size) {
            let pen = Penalty { lambda, weights: Some(weights), ridge: 0.0 };
            let report = problem.solve(&mut state, &pen, opts)?;
            let fit = AugmentedFit::from_state(&state, lambda, report.objective, report.sweeps);
            let size = fit.support.len();
            fits.push(fit);
            if stop_above.is_some_and(|cap| size > cap) {
                break;
            }
        }
        Ok(fits)
    }
}

/// Warm-started ridge fits over a decreasing sequence of levels on one design.
struct RidgeSolver<'d> {
    design: &'d SignedDesign,
    noise: Vec<f64>,
    loss: SmoothLoss,
    state: CdState,
}

impl<'d> RidgeSolver<'d> {
    fn new(design: &'d SignedDesign, eps: &[f64], loss: SmoothLoss) -> Self {
        Self { design, noise: design.signed_noise(eps), loss, state: CdState::zeros(design) }
    }

    fn solve(&mut self, lambda: f64) -> Result<(Vec<f64>, f64)> {
        let problem = MarginProblem { design: self.design, noise: Some(&self.noise), loss: self.loss };
        let pen = Penalty { lambda: 0.0, weights: None, ridge: lambda };
        problem.solve(&mut self.state, &pen, CdOptions { tol: RIDGE_TOL, ..CdOptions::default() })?;
        Ok((self.state.beta.clone(), self.state.sigma))
    }
}

fn check_weights(weights: &[f64], p: usize) -> Result<()> {
    if weights.len() != p {
        return Err(ReproError::InvalidInput(format!("{} weights for p={p}", weights.len())));
    }
    if weights.iter().any(|&w| !(w > 0.0 && w <= W_MAX)) {
        return Err(ReproError::InvalidInput(format!("weights must lie in (0, {W_MAX:e}]")));
    }
    Ok(())
}

/// `grid_size` log-spaced values from `top` down to `ratio * top`.
pub fn log_grid(top: f64, ratio: f64, grid_size: usize) -> Vec<f64> {
    let step = ratio.ln() / (grid_size - 1) as f64;
    (0..grid_size).map(|g| top * (step * g as f64).exp()).collect()
}

/// Adaptive weights `1 / |beta_tilde_k|`, capped at [`W_MAX`].
pub fn adaptive_weights(beta_tilde: &[f64]) -> Vec<f64> {
    beta_tilde.iter().map(|b| 1.0 / b.abs().max(1.0 / W_MAX)).collect()
}

/// Cross-validated ridge initializer.
pub fn fit_ridge_cv(data: &Dataset, eps_star: &[f64], loss: SurrogateLoss, folds: usize) -> Result<RidgeFit> {
    AugmentedContext::new(data, folds)?.fit_ridge_cv(eps_star, loss)
}

/// Adaptive-L1 fit of the noise-augmented surrogate problem at one level.
pub fn fit_adaptive_l1(
    data: &Dataset,
    eps_star: &[f64],
    loss: SurrogateLoss,
    lambda: f64,
    weights: &[f64],
) -> Result<AugmentedFit> {
    AugmentedContext::new(data, 2)?.fit_adaptive_l1(eps_star, loss, lambda, weights)
}
