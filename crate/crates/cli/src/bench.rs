//! Replication studies behind the benchmark tables: simulate, build the candidate set, and
//! score each inference output against the population target.

use std::panic::AssertUnwindSafe;
use std::time::Instant;

use rand::seq::index::sample;
use repro_core::candidate::{build_candidate_set, CandidateSet, DEFAULT_SPARSITY_BOUND, DEFAULT_XI_GRID};
use repro_core::coef::{confset_beta, confset_beta_j, confset_case_prob, Membership};
use repro_core::glm::inv_logit;
use repro_core::model_cs::{model_confidence_set, NuisanceMode};
use repro_core::rng::{derive_seed, substream, Purpose};
use repro_core::solvers::SurrogateLoss;
use repro_core::synthetic::{gen_design, population_targets, simulate, SimDesign, SimModel};
use repro_core::{Dataset, Support};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// A named benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub name: String,
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub s_u: usize,
    pub loss: SurrogateLoss,
    pub reps: usize,
    pub m: usize,
    pub alpha: f64,
    pub mode: NuisanceMode,
    /// Fresh rows for the case-probability target.
    pub n_new: usize,
    /// Columns outside the target support checked for single-coefficient inference.
    pub null_columns: usize,
    /// Monte-Carlo size for population targets of misspecified designs.
    pub n_mc: usize,
}

const PRESET_NAMES: [&str; 9] =
    ["m1-desk", "m2-desk", "m3-desk", "m4-desk", "m1-full", "m2-full", "m3-full", "m4-full", "toy"];

impl Preset {
    pub fn names() -> &'static [&'static str] {
        &PRESET_NAMES
    }

    pub fn by_name(name: &str) -> CliResult<Self> {
        let lower = name.to_ascii_lowercase();
        let (model_part, scale) = lower
            .split_once('-')
            .ok_or_else(|| CliError::input(format!("unknown preset '{name}' (expected one of {})", PRESET_NAMES.join(", "))))?;
        let base = |model: SimModel, n, p, d, reps| Preset {
            name: lower.clone(),
            model,
            n,
            p,
            d,
            s_u: DEFAULT_SPARSITY_BOUND,
            loss: SurrogateLoss::Hinge,
            reps,
            m: 300,
            alpha: 0.95,
            mode: NuisanceMode::Mle,
            n_new: 2,
            null_columns: 20,
            n_mc: 50_000,
        };
        let model: SimModel = model_part.parse().map_err(|_| CliError::input(format!("unknown preset '{name}'")))?;
        match scale {
            "desk" if model == SimModel::M4 => Ok(base(model, 500, 120, 300, 60)),
            "desk" => Ok(base(model, 300, 120, 200, 60)),
            "full" if model == SimModel::M4 => Ok(base(model, 900, 1000, 10_000, 300)),
            "full" => Ok(base(model, 500, 1000, 5000, 300)),
            _ => Err(CliError::input(format!("unknown preset '{name}' (expected one of {})", PRESET_NAMES.join(", ")))),
        }
    }

    /// A seconds-scale preset for smoke tests.
    pub fn toy() -> Self {
        Self {
            name: "toy".into(),
            model: SimModel::M3,
            n: 120,
            p: 15,
            d: 10,
            s_u: 6,
            loss: SurrogateLoss::Hinge,
            reps: 3,
            m: 30,
            alpha: 0.95,
            mode: NuisanceMode::Mle,
            n_new: 2,
            null_columns: 5,
            n_mc: 5000,
        }
    }

    pub fn lookup(name: &str) -> CliResult<Self> {
        if name.eq_ignore_ascii_case("toy") {
            Ok(Self::toy())
        } else {
            Self::by_name(name)
        }
    }

    /// Multiplies `n`, `p`, and `d` by `factor`, rounding and keeping the target support.
    pub fn scaled(mut self, factor: f64) -> CliResult<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(CliError::input(format!("scale must be positive, got {factor}")));
        }
        let scale = |v: usize| ((v as f64 * factor).round() as usize).max(1);
        self.n = scale(self.n).max(10);
        self.p = scale(self.p).max(self.s_u.max(5));
        self.d = scale(self.d);
        self.null_columns = self.null_columns.min(self.p.saturating_sub(4));
        Ok(self)
    }

    pub fn design(&self) -> SimDesign {
        SimDesign::with_size(self.model, self.n, self.p, self.d)
    }
}

/// Which outputs a replication computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parts {
    pub coef: bool,
    pub caseprob: bool,
    pub mcs: bool,
}

impl Default for Parts {
    fn default() -> Self {
        Self { coef: true, caseprob: true, mcs: true }
    }
}

impl std::str::FromStr for Parts {
    type Err = String;

    /// Comma list from `candidate`, `coef`, `caseprob`, `mcs`, or `all`. The candidate set is
    /// always built.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut parts = Parts { coef: false, caseprob: false, mcs: false };
        for item in s.split(',').map(str::trim) {
            match item.to_ascii_lowercase().as_str() {
                "candidate" => {}
                "coef" => parts.coef = true,
                "caseprob" => parts.caseprob = true,
                "mcs" => parts.mcs = true,
                "all" => parts = Parts::default(),
                other => return Err(format!("unknown part '{other}' (expected candidate, coef, caseprob, mcs, all)")),
            }
        }
        Ok(parts)
    }
}

/// Target support and coefficients (0-based support, full-length coefficient vector).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub tau0: Support,
    pub beta0: Vec<f64>,
}

/// Truth for well-specified designs, the Monte-Carlo population target otherwise.
pub fn target_for(preset: &Preset, seed: u64) -> CliResult<Target> {
    let design = preset.design();
    if let Some(model) = design.true_model() {
        return Ok(Target { beta0: model.full_beta(design.p), tau0: model.tau });
    }
    let pop = population_targets(&design, preset.s_u, preset.n_mc, seed)?;
    let mut beta0 = vec![0.0; design.p];
    for (&k, &b) in pop.tau0.as_slice().iter().zip(&pop.beta0) {
        beta0[k] = b;
    }
    Ok(Target { tau0: pop.tau0, beta0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientOutcome {
    /// 1-based column.
    pub column: usize,
    pub in_target: bool,
    /// Whether any candidate model contains the column.
    pub selected: bool,
    pub covered: bool,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McsOutcome {
    pub size: usize,
    pub covers: bool,
    pub subset_of_candidates: bool,
}

/// Everything scored in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub rep: usize,
    pub seed: u64,
    pub candidate_size: usize,
    pub candidate_covers: bool,
    pub coefficients: Vec<CoefficientOutcome>,
    pub beta_covered: Option<bool>,
    pub caseprob_covered: Option<bool>,
    pub mcs: Option<McsOutcome>,
    pub seconds: f64,
}

/// A replication that returned an error or panicked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub rep: usize,
    pub error: String,
}

/// Columns outside `tau0` checked in every replication; fixed per master seed.
pub fn null_columns(preset: &Preset, target: &Target, seed: u64) -> Vec<usize> {
    let outside: Vec<usize> = (0..preset.p).filter(|&k| !target.tau0.contains(k)).collect();
    let count = preset.null_columns.min(outside.len());
    let mut rng = substream(seed, Purpose::Replication, u64::MAX);
    let mut cols: Vec<usize> = sample(&mut rng, outside.len(), count).into_iter().map(|i| outside[i]).collect();
    cols.sort_unstable();
    cols
}

/// Seed of replication `rep` under master `seed`.
pub fn replication_seed(seed: u64, rep: usize) -> u64 {
    derive_seed(seed, Purpose::Replication, rep as u64)
}

/// The simulated dataset and candidate set of one replication.
pub fn replication_inputs(preset: &Preset, seed: u64, rep: usize) -> CliResult<(Dataset, CandidateSet)> {
    let rseed = replication_seed(seed, rep);
    let sim = simulate(&preset.design(), rseed)?;
    let cand = build_candidate_set(&sim.data, preset.d, preset.s_u, preset.loss, &DEFAULT_XI_GRID, rseed)?;
    Ok((sim.data, cand))
}

/// Runs replication `rep`.
pub fn run_replication(preset: &Preset, parts: Parts, target: &Target, nulls: &[usize], seed: u64, rep: usize) -> CliResult<Replication> {
    let start = Instant::now();
    let rseed = replication_seed(seed, rep);
    let (data, cand) = replication_inputs(preset, seed, rep)?;
    let mut out = Replication {
        rep,
        seed: rseed,
        candidate_size: cand.len(),
        candidate_covers: cand.contains(&target.tau0),
        coefficients: Vec::new(),
        beta_covered: None,
        caseprob_covered: None,
        mcs: None,
        seconds: 0.0,
    };
    let empty = cand.is_empty();
    if parts.coef {
        let columns = target.tau0.as_slice().iter().copied().chain(nulls.iter().copied());
        for j in columns {
            let (covered, length) = if empty {
                (false, 0.0)
            } else {
                let set = confset_beta_j(&data, &cand, j, preset.alpha)?;
                (set.contains(target.beta0[j]), set.length)
            };
            out.coefficients.push(CoefficientOutcome {
                column: j + 1,
                in_target: target.tau0.contains(j),
                selected: cand.models.iter().any(|m| m.contains(j)),
                covered,
                length,
            });
        }
        out.beta_covered = Some(!empty && confset_beta(&data, &cand, preset.alpha)?.contains(&target.beta0));
    }
    if parts.caseprob {
        let x_new = gen_design(preset.n_new, preset.p, derive_seed(rseed, Purpose::NewObservations, 0));
        let pi: Vec<f64> = (0..preset.n_new)
            .map(|i| inv_logit((0..preset.p).map(|k| x_new[(i, k)] * target.beta0[k]).sum()))
            .collect();
        out.caseprob_covered = Some(
            !empty && confset_case_prob(&data, &cand, &x_new, preset.alpha)?.contains_probabilities(&pi) == Membership::Covered,
        );
    }
    if parts.mcs && !empty {
        let mcs = model_confidence_set(&data, &cand, preset.alpha, preset.m, preset.mode, rseed)?;
        out.mcs = Some(McsOutcome {
            size: mcs.len(),
            covers: mcs.contains(&target.tau0),
            subset_of_candidates: mcs.models.iter().all(|t| cand.contains(&t.tau)),
        });
    } else if parts.mcs {
        out.mcs = Some(McsOutcome { size: 0, covers: false, subset_of_candidates: true });
    }
    out.seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Runs every replication, isolating errors and panics.
pub fn run_replications(
    preset: &Preset,
    parts: Parts,
    target: &Target,
    seed: u64,
) -> (Vec<Replication>, Vec<FailedReplication>) {
    let nulls = null_columns(preset, target, seed);
    let results = repro_core::par_map(preset.reps, |rep| {
        match std::panic::catch_unwind(AssertUnwindSafe(|| run_replication(preset, parts, target, &nulls, seed, rep))) {
            Ok(Ok(r)) => Ok(r),
            Ok(Err(e)) => Err(FailedReplication { rep, error: e.to_string() }),
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "unknown panic".into());
                Err(FailedReplication { rep, error: format!("panic: {msg}") })
            }
        }
    });
    let mut done = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(r) => done.push(r),
            Err(f) => {
                log::warn!("replication {} failed: {}", f.rep, f.error);
                failed.push(f);
            }
        }
    }
    (done, failed)
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, sd })
    }
}

impl std::fmt::Display for Summary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}({:.2})", self.mean, self.sd)
    }
}

fn indicator(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub coverage: Summary,
    /// `cardinality` or `length`.
    pub size_kind: String,
    pub size: Option<Summary>,
    pub count: usize,
}

/// Aggregated replication study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub preset: Preset,
    pub seed: u64,
    pub target: Target,
    pub completed: usize,
    pub failed: Vec<FailedReplication>,
    /// True when any replication failed.
    pub incomplete: bool,
    pub rows: Vec<ReportRow>,
    pub replications: Vec<Replication>,
    pub wall_seconds: f64,
}

fn row(method: String, covers: &[f64], size_kind: &str, sizes: &[f64]) -> Option<ReportRow> {
    Some(ReportRow {
        method,
        coverage: Summary::of(covers)?,
        size_kind: size_kind.into(),
        size: Summary::of(sizes),
        count: covers.len(),
    })
}

/// Table rows from the finished replications.
pub fn summarize(preset: &Preset, reps: &[Replication]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    let cover: Vec<f64> = reps.iter().map(|r| indicator(r.candidate_covers)).collect();
    let card: Vec<f64> = reps.iter().map(|r| r.candidate_size as f64).collect();
    rows.extend(row(format!("candidate set ({})", preset.loss.name()), &cover, "cardinality", &card));

    for (label, inside) in [("beta_j, j in tau0", true), ("beta_j, j not in tau0", false)] {
        let picked: Vec<&CoefficientOutcome> =
            reps.iter().flat_map(|r| &r.coefficients).filter(|c| c.in_target == inside).collect();
        let cover: Vec<f64> = picked.iter().map(|c| indicator(c.covered)).collect();
        let len: Vec<f64> = picked.iter().map(|c| c.length).collect();
        rows.extend(row(label.into(), &cover, "length", &len));
    }
    let beta: Vec<f64> = reps.iter().filter_map(|r| r.beta_covered).map(indicator).collect();
    rows.extend(row("beta (A = I_p)".into(), &beta, "", &[]));
    let case: Vec<f64> = reps.iter().filter_map(|r| r.caseprob_covered).map(indicator).collect();
    rows.extend(row(format!("case probability ({} rows)", preset.n_new), &case, "", &[]));
    let mcs: Vec<&McsOutcome> = reps.iter().filter_map(|r| r.mcs.as_ref()).collect();
    let cover: Vec<f64> = mcs.iter().map(|o| indicator(o.covers)).collect();
    let card: Vec<f64> = mcs.iter().map(|o| o.size as f64).collect();
    let mode = match preset.mode {
        NuisanceMode::Mle => "mle",
        NuisanceMode::Profile => "profile",
    };
    rows.extend(row(format!("model confidence set ({mode}, m={})", preset.m), &cover, "cardinality", &card));
    rows
}

/// Runs the study for `preset` and aggregates it.
pub fn run_benchmark(preset: &Preset, parts: Parts, seed: u64) -> CliResult<BenchmarkReport> {
    if preset.reps == 0 {
        return Err(CliError::input("need at least one replication"));
    }
    let start = Instant::now();
    let target = target_for(preset, seed)?;
    let (replications, failed) = run_replications(preset, parts, &target, seed);
    let rows = summarize(preset, &replications);
    Ok(BenchmarkReport {
        preset: preset.clone(),
        seed,
        target,
        completed: replications.len(),
        incomplete: !failed.is_empty(),
        failed,
        rows,
        replications,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Plain-text table with `mean(sd)` cells.
pub fn format_table(report: &BenchmarkReport) -> String {
    let p = &report.preset;
    let mut out = format!(
        "{}: {}, n={}, p={}, d={}, s_u={}, {} loss, alpha={}, {}/{} replications{}\n",
        p.name,
        p.model.name(),
        p.n,
        p.p,
        p.d,
        p.s_u,
        p.loss.name(),
        p.alpha,
        report.completed,
        p.reps,
        if report.incomplete { " (INCOMPLETE)" } else { "" }
    );
    out.push_str(&format!("target tau0 = {}\n", report.target.tau0));
    out.push_str(&format!("{:<34} {:<14} {}\n", "method", "coverage", "size"));
    for r in &report.rows {
        let size = match (&r.size, r.size_kind.as_str()) {
            (Some(s), kind) if !kind.is_empty() => format!("{s} {kind}"),
            _ => "-".into(),
        };
        out.push_str(&format!("{:<34} {:<14} {}\n", r.method, r.coverage.to_string(), size));
    }
    out.push_str(&format!("wall time {:.1} s\n", report.wall_seconds));
    out
}
