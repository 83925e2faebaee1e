//! Confidence sets for linear combinations `A beta_0` of the working-GLM coefficients,
//! built as unions over candidate models of Wald ellipsoids with a sandwich covariance.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::candidate::CandidateSet;
use crate::error::{ReproError, Result};
use crate::glm::{fit_quasi_mle, inv_logit, link_logit, loglik_hess, observation_scores, Dataset, Support, WorkingModel};
use crate::special::chi2_quantile;

/// Relative singular-value cutoff for the numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Smallest admissible eigenvalue of a sandwich covariance.
pub const MIN_EIGENVALUE: f64 = 1e-10;

/// Relative tolerance for a target point lying in the column space of a region map.
const SPAN_TOL: f64 = 1e-8;

/// `A_tau = C D` with `D` having orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RankFactorization {
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub rank: usize,
}

/// Rank factorization from the singular value decomposition `A = U S V'`: `D` holds the
/// leading `r` rows of `V'` and `C = U_r S_r`, with `r` the count of singular values above
/// `tol * s_max`.
pub fn rank_factorize(a_tau: &DMatrix<f64>, tol: f64) -> Result<RankFactorization> {
    let (q, k) = a_tau.shape();
    if a_tau.iter().any(|v| !v.is_finite()) {
        return Err(ReproError::InvalidInput("matrix contains non-finite entries".into()));
    }
    if q == 0 || k == 0 {
        return Ok(RankFactorization { c: DMatrix::zeros(q, 0), d: DMatrix::zeros(0, k), rank: 0 });
    }
    let (us, s, vt) = jacobi_svd(a_tau);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    let s_max = order.first().map_or(0.0, |&i| s[i]);
    let kept: Vec<usize> = order.into_iter().filter(|&i| s_max > 0.0 && s[i] > tol * s_max).collect();
    let rank = kept.len();
    let d = DMatrix::from_fn(rank, k, |r, col| vt[(kept[r], col)]);
    let c = DMatrix::from_fn(q, rank, |row, r| us[(row, kept[r])]);
    Ok(RankFactorization { c, d, rank })
}

/// Thin SVD `(U S, s, V')` by one-sided Jacobi rotations.
///
/// The first factor holds the scaled left singular vectors, so `C` is read off directly.
/// nalgebra's bidiagonal SVD returns inconsistent factors on a small fraction of
/// rank-deficient inputs; Jacobi rotations keep `(U S) V' = A` to rounding error.
fn jacobi_svd(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if a.nrows() < a.ncols() {
        // A' = (W S) Z' gives A = (Z S) W'.
        let (ws, s, zt) = jacobi_svd(&a.transpose());
        let zs = DMatrix::from_fn(zt.ncols(), zt.nrows(), |r, c| zt[(c, r)] * s[c]);
        let wt = DMatrix::from_fn(ws.ncols(), ws.nrows(), |r, c| if s[r] > 0.0 { ws[(c, r)] / s[r] } else { 0.0 });
        return (zs, s, wt);
    }
    let n = a.ncols();
    let mut us = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = us.column(i).norm_squared();
                let beta = us.column(j).norm_squared();
                let gamma = us.column(i).dot(&us.column(j));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = c * t;
                rotate_columns(&mut us, i, j, c, sn);
                rotate_columns(&mut v, i, j, c, sn);
            }
        }
        if !rotated {
            break;
        }
    }
    let s = (0..n).map(|i| us.column(i).norm()).collect();
    (us, s, v.transpose())
}

const JACOBI_SWEEPS: usize = 100;

fn rotate_columns(m: &mut DMatrix<f64>, i: usize, j: usize, c: f64, s: f64) {
    for r in 0..m.nrows() {
        let (x, y) = (m[(r, i)], m[(r, j)]);
        m[(r, i)] = c * x - s * y;
        m[(r, j)] = s * x + c * y;
    }
}

/// Sandwich covariance `D H^{-1} Cov(score) H^{-1} D'` at a fitted working model.
///
/// `H` is the mean Hessian and `Cov` the sample covariance of per-observation scores with
/// `1/(n-1)` normalization; the result is symmetrized.
pub fn sandwich_cov(data: &Dataset, model: &WorkingModel, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = model.tau.len();
    if d.ncols() != k {
        return Err(ReproError::InvalidInput(format!("D has {} columns for a support of size {k}", d.ncols())));
    }
    let n = data.n();
    if n <= k {
        return Err(ReproError::InvalidInput(format!("need n > |tau|, got n={n}, |tau|={k}")));
    }
    let r = d.nrows();
    if r == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let neg_hess = -loglik_hess(data, model)?;
    let h_inv = match neg_hess.clone().cholesky() {
        Some(ch) => ch.inverse(),
        None => neg_hess
            .try_inverse()
            .ok_or_else(|| ReproError::Numeric(format!("singular Hessian on support {}", model.tau)))?,
    };
    let scores = observation_scores(data, model)?;
    let mean = scores.row_mean();
    let mut centered = scores;
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let cov = centered.tr_mul(&centered) / (n - 1) as f64;
    // the sign of H cancels in the sandwich
    let left = d * &h_inv;
    let v = &left * cov * left.transpose();
    let v = (&v + v.transpose()) * 0.5;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(ReproError::Numeric("non-finite sandwich covariance".into()));
    }
    let min_eig = v.clone().symmetric_eigenvalues().min();
    if !(min_eig > MIN_EIGENVALUE) {
        return Err(ReproError::IllConditioned(min_eig));
    }
    Ok(v)
}

/// `n (center - t)' V^{-1} (center - t)` through a Cholesky solve.
pub fn wald_quadratic(n: usize, center: &[f64], v: &DMatrix<f64>, t: &[f64]) -> Result<f64> {
    let r = center.len();
    if t.len() != r || v.shape() != (r, r) {
        return Err(ReproError::InvalidInput("Wald statistic dimension mismatch".into()));
    }
    if r == 0 {
        return Ok(0.0);
    }
    let diff = DVector::from_iterator(r, center.iter().zip(t).map(|(c, x)| c - x));
    let ch = v.clone().cholesky().ok_or(ReproError::IllConditioned(f64::NAN))?;
    let sol = ch.solve(&diff);
    Ok(n as f64 * diff.dot(&sol))
}

/// Wald statistic for `D beta_tau = t` at a fitted model.
pub fn wald_stat(data: &Dataset, model: &WorkingModel, d: &DMatrix<f64>, v: &DMatrix<f64>, t: &[f64]) -> Result<f64> {
    let center = d * DVector::from_column_slice(&model.beta);
    wald_quadratic(data.n(), center.as_slice(), v, t)
}

/// Ellipsoidal region `{C u : n (u - center)' shape^{-1} (u - center) <= threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefRegion {
    pub tau: Support,
    pub center: Vec<f64>,
    #[serde(with = "rows")]
    pub shape: DMatrix<f64>,
    pub threshold: f64,
    #[serde(rename = "C", with = "rows")]
    pub c_map: DMatrix<f64>,
    pub df: usize,
    pub n: usize,
}

impl CoefRegion {
    /// Region coordinates of `t` when it lies in the span of the map.
    fn coordinates(&self, t: &[f64]) -> Option<DVector<f64>> {
        let t = DVector::from_column_slice(t);
        let scale = 1.0 + t.amax();
        if self.df == 0 {
            return (t.amax() <= SPAN_TOL * scale).then(|| DVector::zeros(0));
        }
        let gram = self.c_map.tr_mul(&self.c_map);
        let u = gram.cholesky()?.solve(&self.c_map.tr_mul(&t));
        let resid = &self.c_map * &u - &t;
        (resid.amax() <= SPAN_TOL * scale).then_some(u)
    }

    /// Wald statistic of target point `t`, or `None` when `t` is outside the span.
    pub fn statistic(&self, t: &[f64]) -> Option<f64> {
        if t.len() != self.c_map.nrows() {
            return None;
        }
        let u = self.coordinates(t)?;
        wald_quadratic(self.n, &self.center, &self.shape, u.as_slice()).ok()
    }

    pub fn contains(&self, t: &[f64]) -> bool {
        self.statistic(t).is_some_and(|w| w <= self.threshold)
    }
}

/// A candidate model left out of the union, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedModel {
    pub tau: Support,
    pub reason: String,
}

/// Map from the linear target to the reported scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    InvLogit,
}

/// Outcome of a membership query on the probability scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Membership {
    Covered,
    NotCovered,
    /// Some probability is 0 or 1, which no finite linear predictor reaches.
    Boundary,
}

/// Union of Wald regions over the candidate models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefConfidenceSet {
    pub alpha: f64,
    pub target: String,
    pub transform: Transform,
    pub regions: Vec<CoefRegion>,
    pub skipped: Vec<SkippedModel>,
}

impl CoefConfidenceSet {
    /// Whether the linear-scale point `t` lies in at least one region.
    pub fn contains(&self, t: &[f64]) -> bool {
        self.regions.iter().any(|r| r.contains(t))
    }

    /// Membership on the probability scale via the logit of each coordinate.
    pub fn contains_probabilities(&self, pi: &[f64]) -> Membership {
        let linear: Option<Vec<f64>> = pi.iter().map(|&p| link_logit(p).ok()).collect();
        match linear {
            None => Membership::Boundary,
            Some(t) if self.contains(&t) => Membership::Covered,
            Some(_) => Membership::NotCovered,
        }
    }

    /// Region centers mapped to the reported scale.
    pub fn mapped_centers(&self) -> Vec<Vec<f64>> {
        self.regions
            .iter()
            .map(|r| {
                let t = &r.c_map * DVector::from_column_slice(&r.center);
                t.iter()
                    .map(|&z| match self.transform {
                        Transform::Identity => z,
                        Transform::InvLogit => inv_logit(z),
                    })
                    .collect()
            })
            .collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ReproError::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

/// Wald region for one candidate model.
pub fn model_region(data: &Dataset, tau: &Support, a: &DMatrix<f64>, alpha: f64) -> Result<CoefRegion> {
    let a_tau = a.select_columns(tau.as_slice());
    let fact = rank_factorize(&a_tau, RANK_TOL)?;
    if fact.rank == 0 {
        return Ok(CoefRegion {
            tau: tau.clone(),
            center: Vec::new(),
            shape: DMatrix::zeros(0, 0),
            threshold: 0.0,
            c_map: fact.c,
            df: 0,
            n: data.n(),
        });
    }
    let model = fit_quasi_mle(data, tau)?;
    let shape = sandwich_cov(data, &model, &fact.d)?;
    let center = (&fact.d * DVector::from_column_slice(&model.beta)).as_slice().to_vec();
    Ok(CoefRegion {
        tau: tau.clone(),
        center,
        shape,
        threshold: chi2_quantile(alpha, fact.rank)?,
        c_map: fact.c,
        df: fact.rank,
        n: data.n(),
    })
}

fn union_of_regions(
    data: &Dataset,
    cand: &CandidateSet,
    a: &DMatrix<f64>,
    alpha: f64,
    target: String,
    transform: Transform,
) -> Result<CoefConfidenceSet> {
    check_alpha(alpha)?;
    if cand.is_empty() {
        return Err(ReproError::InvalidInput("candidate set is empty".into()));
    }
    if a.ncols() != data.p() {
        return Err(ReproError::InvalidInput(format!("A has {} columns, expected p={}", a.ncols(), data.p())));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(ReproError::InvalidInput("A contains non-finite entries".into()));
    }
    cand.validate(data.p())?;
    let fits = crate::par_map(cand.len(), |i| model_region(data, &cand.models[i], a, alpha));
    let mut regions = Vec::new();
    let mut skipped = Vec::new();
    for (tau, fit) in cand.models.iter().zip(fits) {
        match fit {
            Ok(r) => regions.push(r),
            Err(e) if e.is_numerical() || matches!(e, ReproError::InvalidInput(_)) => {
                log::warn!("skipping model {tau}: {e}");
                skipped.push(SkippedModel { tau: tau.clone(), reason: e.to_string() });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(CoefConfidenceSet { alpha, target, transform, regions, skipped })
}

/// Level-`alpha` confidence set for `A beta_0`.
pub fn confset_abeta(data: &Dataset, cand: &CandidateSet, a: &DMatrix<f64>, alpha: f64) -> Result<CoefConfidenceSet> {
    union_of_regions(data, cand, a, alpha, format!("A beta with A of size {}x{}", a.nrows(), a.ncols()), Transform::Identity)
}

/// Confidence set for the whole coefficient vector (`A = I_p`).
pub fn confset_beta(data: &Dataset, cand: &CandidateSet, alpha: f64) -> Result<CoefConfidenceSet> {
    let a = DMatrix::identity(data.p(), data.p());
    union_of_regions(data, cand, &a, alpha, "beta".into(), Transform::Identity)
}

/// Union of intervals for one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    /// 1-based column.
    pub column: usize,
    pub alpha: f64,
    pub intervals: Vec<[f64; 2]>,
    pub length: f64,
    pub skipped: Vec<SkippedModel>,
}

impl CoefficientSet {
    pub fn contains(&self, value: f64) -> bool {
        self.intervals.iter().any(|&[lo, hi]| lo <= value && value <= hi)
    }
}

/// Sorts and merges overlapping closed intervals.
pub fn merge_intervals(mut intervals: Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    intervals.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut merged: Vec<[f64; 2]> = Vec::with_capacity(intervals.len());
    for iv in intervals {
        match merged.last_mut() {
            Some(last) if iv[0] <= last[1] => last[1] = last[1].max(iv[1]),
            _ => merged.push(iv),
        }
    }
    merged
}

/// Confidence set for `beta_{0,j}` (`j` 0-based): a Wald interval for each model containing
/// `j` and the point `{0}` for each model without it.
pub fn confset_beta_j(data: &Dataset, cand: &CandidateSet, j: usize, alpha: f64) -> Result<CoefficientSet> {
    if j >= data.p() {
        return Err(ReproError::InvalidInput(format!("column {} outside 1..={}", j + 1, data.p())));
    }
    let mut a = DMatrix::zeros(1, data.p());
    a[(0, j)] = 1.0;
    let set = union_of_regions(data, cand, &a, alpha, format!("beta_{}", j + 1), Transform::Identity)?;
    let intervals = set
        .regions
        .iter()
        .map(|r| {
            if r.df == 0 {
                return [0.0, 0.0];
            }
            let half = (r.threshold * r.shape[(0, 0)] / r.n as f64).sqrt();
            let c = r.c_map[(0, 0)];
            let (a, b) = (c * (r.center[0] - half), c * (r.center[0] + half));
            [a.min(b), a.max(b)]
        })
        .collect();
    let intervals = merge_intervals(intervals);
    let length = intervals.iter().map(|[lo, hi]| hi - lo).sum();
    Ok(CoefficientSet { column: j + 1, alpha, intervals, length, skipped: set.skipped })
}

/// Confidence set for the case probabilities `g^{-1}(X_new beta_0)`.
pub fn confset_case_prob(data: &Dataset, cand: &CandidateSet, x_new: &DMatrix<f64>, alpha: f64) -> Result<CoefConfidenceSet> {
    union_of_regions(data, cand, x_new, alpha, format!("case probabilities for {} new rows", x_new.nrows()), Transform::InvLogit)
}

/// Serializes matrices as a list of rows.
mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Shaped {
        rows: usize,
        cols: usize,
        data: Vec<Vec<f64>>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        Shaped { rows: m.nrows(), cols: m.ncols(), data }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let sh = Shaped::deserialize(d)?;
        if sh.data.len() != sh.rows || sh.data.iter().any(|r| r.len() != sh.cols) {
            return Err(serde::de::Error::custom("matrix rows do not match the stated shape"));
        }
        Ok(DMatrix::from_fn(sh.rows, sh.cols, |i, j| sh.data[i][j]))
    }
}
