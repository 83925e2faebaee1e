//! Plain L1-penalized logistic regression path, used as the model selector inside the
//! model confidence set.
//!
//! Objective at level `lambda`: `-(1/n) sum_i l(y_i, X_i' beta) + lambda ||beta||_1`.

use serde::{Deserialize, Serialize};

use crate::error::{ReproError, Result};
use crate::glm::{Dataset, Support};

use super::adaptive::log_grid;
use super::cd::{CdOptions, CdState, MarginProblem, Penalty, SignedDesign};
use super::loss::SmoothLoss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathOptions {
    pub grid_size: usize,
    /// Smallest level as a fraction of `lambda_max`.
    pub ratio: f64,
    /// Stop once the support grows past this size.
    pub stop_above: Option<usize>,
    pub cd: CdOptions,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { grid_size: 50, ratio: 1e-3, stop_above: None, cd: CdOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub beta: Vec<f64>,
    pub support: Support,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Path {
    pub lambda_max: f64,
    pub points: Vec<PathPoint>,
}

impl L1Path {
    pub fn lambdas(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.lambda).collect()
    }

    pub fn supports(&self) -> impl Iterator<Item = &Support> {
        self.points.iter().map(|p| &p.support)
    }
}

/// `max_k |(1/n) sum_i (y_i - 1/2) x_ik|`, the smallest level with an all-zero solution.
pub fn l1_lambda_max(data: &Dataset) -> f64 {
    let n = data.n() as f64;
    (0..data.p())
        .map(|k| {
            data.column(k).iter().zip(data.y()).map(|(x, y)| (y - 0.5) * x).sum::<f64>().abs() / n
        })
        .fold(0.0, f64::max)
}

/// Warm-started L1 logistic path on a log-spaced grid from `lambda_max` down.
pub fn l1_logistic_path(data: &Dataset, opts: PathOptions) -> Result<L1Path> {
    l1_logistic_path_on(&SignedDesign::new(data), data, opts)
}

/// As [`l1_logistic_path`] with a prebuilt signed design; `data` supplies the response.
pub fn l1_logistic_path_on(design: &SignedDesign, data: &Dataset, opts: PathOptions) -> Result<L1Path> {
    if opts.grid_size < 2 {
        return Err(ReproError::InvalidInput("grid needs at least 2 points".into()));
    }
    if !(opts.ratio > 0.0 && opts.ratio < 1.0) {
        return Err(ReproError::InvalidInput(format!("grid ratio {} outside (0,1)", opts.ratio)));
    }
    let n = data.n() as f64;
    let lambda_max = l1_lambda_max(data);
    let problem = MarginProblem { design, noise: None, loss: SmoothLoss::Logistic };
    let mut state = CdState::zeros(design);
    let mut points = Vec::with_capacity(opts.grid_size);
    if lambda_max == 0.0 {
        points.push(PathPoint { lambda: 0.0, beta: state.beta, support: Support::empty() });
        return Ok(L1Path { lambda_max, points });
    }
    for lambda in log_grid(lambda_max, opts.ratio, opts.grid_size) {
        // the solver works on the summed scale
        let pen = Penalty { lambda: n * lambda, weights: None, ridge: 0.0 };
        problem.solve(&mut state, &pen, opts.cd)?;
        let support = Support::new(state.support());
        let size = support.len();
        points.push(PathPoint { lambda, beta: state.beta.clone(), support });
        if opts.stop_above.is_some_and(|cap| size > cap) {
            break;
        }
    }
    Ok(L1Path { lambda_max, points })
}

/// Largest support on the path with at most `size_cap` entries; ties go to the smallest level.
pub fn path_model_selector(path: &L1Path, size_cap: usize) -> Support {
    let mut best: Option<&PathPoint> = None;
    for point in &path.points {
        if point.support.len() <= size_cap
            && best.is_none_or(|b| point.support.len() > b.support.len() || (point.support.len() == b.support.len() && point.lambda < b.lambda))
        {
            best = Some(point);
        }
    }
    best.map(|b| b.support.clone()).unwrap_or_else(Support::empty)
}

/// Selector `tau_hat(X, y)`: the path selector with early stopping past the cap.
pub fn select_model(data: &Dataset, size_cap: usize, grid_size: usize) -> Result<Support> {
    select_model_on(&SignedDesign::new(data), data, size_cap, grid_size)
}

pub fn select_model_on(design: &SignedDesign, data: &Dataset, size_cap: usize, grid_size: usize) -> Result<Support> {
    let opts = PathOptions { grid_size, stop_above: Some(size_cap + 2), ..PathOptions::default() };
    let path = l1_logistic_path_on(design, data, opts)?;
    Ok(path_model_selector(&path, size_cap))
}
