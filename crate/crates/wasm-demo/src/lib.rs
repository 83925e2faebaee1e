//! Browser demo: simulate a dataset, build its model candidate set, then query a
//! coefficient confidence set or the model confidence set.
//!
//! [`Session`] holds the state and returns JSON strings, so it runs natively in tests;
//! [`Demo`] is the thin JavaScript-facing wrapper.

use repro_core::candidate::{build_candidate_set, CandidateSet, DEFAULT_XI_GRID};
use repro_core::coef::confset_beta_j;
use repro_core::model_cs::{model_confidence_set, NuisanceMode};
use repro_core::solvers::SurrogateLoss;
use repro_core::synthetic::{simulate, SimDesign, SimModel};
use repro_core::Dataset;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest sizes accepted from the page; keeps a single call under a few seconds.
const MAX_N: usize = 2000;
const MAX_P: usize = 200;
const MAX_DRAWS: usize = 500;
const MAX_M: usize = 500;

#[derive(Serialize)]
struct DatasetSummary {
    design: &'static str,
    n: usize,
    p: usize,
    positives: usize,
    /// 1-based true support when the design has one.
    true_support: Option<Vec<usize>>,
}

#[derive(Serialize)]
struct CandidateSummary {
    d: usize,
    /// 1-based supports with the number of draws that chose each.
    models: Vec<(Vec<usize>, usize)>,
    failed_draws: usize,
}

#[derive(Serialize)]
struct RetainedModel {
    support: Vec<usize>,
    t_hat: f64,
    retained: bool,
}

pub struct Session {
    design: SimDesign,
    data: Dataset,
    candidates: Option<CandidateSet>,
}

fn check(name: &str, value: usize, lo: usize, hi: usize) -> Result<(), String> {
    if (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(format!("{name} must lie in {lo}..={hi}, got {value}"))
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

impl Session {
    /// Simulates `n` rows of design `M1`..`M4` with `p` features.
    pub fn simulate(design: &str, n: usize, p: usize, seed: u64) -> Result<Self, String> {
        let model: SimModel = design.parse()?;
        check("n", n, 10, MAX_N)?;
        check("p", p, 4, MAX_P)?;
        let design = SimDesign::with_size(model, n, p, 100);
        let data = simulate(&design, seed).map_err(|e| e.to_string())?.data;
        Ok(Self { design, data, candidates: None })
    }

    pub fn summary(&self) -> Result<String, String> {
        to_json(&DatasetSummary {
            design: self.design.model.name(),
            n: self.data.n(),
            p: self.data.p(),
            positives: self.data.y().iter().filter(|&&y| y == 1.0).count(),
            true_support: self.design.true_model().map(|m| m.tau.one_based()),
        })
    }

    /// Builds and stores the candidate set from `d` repro draws.
    pub fn candidates(&mut self, d: usize, s_u: usize, loss: &str, seed: u64) -> Result<String, String> {
        check("d", d, 1, MAX_DRAWS)?;
        check("s_u", s_u, 1, self.data.p())?;
        let loss: SurrogateLoss = loss.parse()?;
        let cand = build_candidate_set(&self.data, d, s_u, loss, &DEFAULT_XI_GRID, seed).map_err(|e| e.to_string())?;
        let summary = CandidateSummary {
            d,
            models: cand
                .models
                .iter()
                .zip(&cand.provenance)
                .map(|(tau, origins)| {
                    let mut draws: Vec<usize> = origins.iter().map(|o| o.draw).collect();
                    draws.dedup();
                    (tau.one_based(), draws.len())
                })
                .collect(),
            failed_draws: cand.warnings.len(),
        };
        self.candidates = Some(cand);
        to_json(&summary)
    }

    fn candidate_set(&self) -> Result<&CandidateSet, String> {
        match &self.candidates {
            Some(c) if !c.is_empty() => Ok(c),
            Some(_) => Err("the candidate set is empty".into()),
            None => Err("build the candidate set first".into()),
        }
    }

    /// Confidence set for coefficient `j` (1-based).
    pub fn beta_j(&self, j: usize, alpha: f64) -> Result<String, String> {
        check("j", j, 1, self.data.p())?;
        let set = confset_beta_j(&self.data, self.candidate_set()?, j - 1, alpha).map_err(|e| e.to_string())?;
        to_json(&set)
    }

    /// Tests every candidate with `m` synthetic responses.
    pub fn model_cs(&self, m: usize, alpha: f64, seed: u64) -> Result<String, String> {
        check("m", m, 1, MAX_M)?;
        let mcs = model_confidence_set(&self.data, self.candidate_set()?, alpha, m, NuisanceMode::Mle, seed)
            .map_err(|e| e.to_string())?;
        let mut rows: Vec<RetainedModel> = mcs
            .models
            .iter()
            .map(|t| (t, true))
            .chain(mcs.rejected.iter().map(|t| (t, false)))
            .map(|(t, retained)| RetainedModel { support: t.tau.one_based(), t_hat: t.t_hat, retained })
            .collect();
        rows.sort_by(|a, b| (a.support.len(), &a.support).cmp(&(b.support.len(), &b.support)));
        to_json(&rows)
    }
}

/// JavaScript handle around a [`Session`].
#[wasm_bindgen]
pub struct Demo {
    inner: Session,
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(design: &str, n: usize, p: usize, seed: u32) -> Result<Demo, JsError> {
        Session::simulate(design, n, p, seed.into()).map(|inner| Demo { inner }).map_err(|e| JsError::new(&e))
    }

    pub fn summary(&self) -> Result<String, JsError> {
        js(self.inner.summary())
    }

    pub fn candidates(&mut self, d: usize, s_u: usize, loss: &str, seed: u32) -> Result<String, JsError> {
        js(self.inner.candidates(d, s_u, loss, seed.into()))
    }

    pub fn beta_j(&self, j: usize, alpha: f64) -> Result<String, JsError> {
        js(self.inner.beta_j(j, alpha))
    }

    pub fn model_cs(&self, m: usize, alpha: f64, seed: u32) -> Result<String, JsError> {
        js(self.inner.model_cs(m, alpha, seed.into()))
    }
}
