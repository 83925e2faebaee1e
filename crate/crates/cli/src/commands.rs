//! Subcommand definitions and their implementations.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use repro_core::candidate::{build_candidate_set, CandidateSet, DEFAULT_SPARSITY_BOUND, DEFAULT_XI_GRID};
use repro_core::coef::{confset_abeta, confset_beta, confset_beta_j, confset_case_prob};
use repro_core::model_cs::{model_confidence_set, NuisanceMode};
use repro_core::solvers::SurrogateLoss;
use repro_core::synthetic::{population_targets, simulate, SimDesign, SimModel};
use repro_core::Dataset;

use crate::bench::{format_table, run_benchmark, Parts, Preset};
use crate::config::{check_alpha, check_positive, resolve_threads, ConfigFile, NumberList, THREADS_ENV};
use crate::error::{CliError, CliResult};
use crate::io::{dataset_csv, emit, read_dataset, read_json, read_matrix, to_checked_json, to_json, uniforms_csv};

const DEFAULT_SEED: u64 = 1;
const DEFAULT_D: usize = 200;
const DEFAULT_M: usize = 300;
const DEFAULT_ALPHA: f64 = 0.95;
const DEFAULT_N_MC: usize = 50_000;

#[derive(Debug, Parser)]
#[command(name = "repro", version, about = "Repro-samples inference for sparse binary classification")]
pub struct Cli {
    /// Key-value configuration file; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (overrides REPRO_THREADS and the config file).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Master seed for every random substream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a dataset from one of the designs M1-M4.
    Simulate(SimulateArgs),
    /// Build a model candidate set from repro noises.
    Candidate(CandidateArgs),
    /// Confidence sets for coefficients or case probabilities.
    Infer(InferArgs),
    /// Model confidence set from the candidate set.
    ModelCs(ModelCsArgs),
    /// Replication study summarized as coverage and size tables.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// Design M1, M2, M3, or M4.
    #[arg(long)]
    pub design: Option<SimModel>,
    /// Number of observations.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of features.
    #[arg(long)]
    pub p: Option<usize>,
    /// Multiplies the default n and p of the design's desk preset.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Dataset CSV (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Realized uniforms `u`, one per row.
    #[arg(long)]
    pub u_out: Option<PathBuf>,
    /// Forward-stepwise population fit-versus-size curve as CSV.
    #[arg(long)]
    pub targets_out: Option<PathBuf>,
    /// Monte-Carlo size for the population curve.
    #[arg(long)]
    pub n_mc: Option<usize>,
}

#[derive(Debug, Args, Default, Clone)]
pub struct SelectionArgs {
    /// Number of repro noise draws.
    #[arg(long)]
    pub d: Option<usize>,
    /// Sparsity upper bound.
    #[arg(long)]
    pub s_u: Option<usize>,
    /// Surrogate loss: hinge or logistic.
    #[arg(long)]
    pub loss: Option<SurrogateLoss>,
    /// EBIC xi values, comma separated.
    #[arg(long)]
    pub xi_grid: Option<NumberList>,
}

#[derive(Debug, Args, Default)]
pub struct CandidateArgs {
    /// Dataset CSV with header y,x1,...,xp.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Candidate-set JSON (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InferTarget {
    /// `A beta` for a matrix file `--a`.
    Abeta,
    /// One coefficient `--j` (1-based).
    #[value(name = "beta-j", alias = "beta_j")]
    BetaJ,
    /// The whole coefficient vector.
    Beta,
    /// Case probabilities of the rows in `--x-new`.
    Caseprob,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    pub target: InferTarget,
    /// Dataset CSV with header y,x1,...,xp.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidate-set JSON; built from the selection flags when omitted.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Confidence level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// 1-based column for beta-j.
    #[arg(long)]
    pub j: Option<usize>,
    /// CSV matrix with p columns for abeta.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// CSV rows with p columns for caseprob.
    #[arg(long)]
    pub x_new: Option<PathBuf>,
    /// Confidence-set JSON (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct ModelCsArgs {
    /// Dataset CSV with header y,x1,...,xp.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Candidate-set JSON; built from the selection flags when omitted.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[command(flatten)]
    pub selection: SelectionArgs,
    /// Confidence level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Synthetic responses per candidate.
    #[arg(long)]
    pub m: Option<usize>,
    /// Nuisance handling: mle or profile.
    #[arg(long)]
    pub mode: Option<NuisanceMode>,
    /// Model-confidence-set JSON (standard output when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct BenchmarkArgs {
    /// m1-desk ... m4-desk, m1-full ... m4-full, or toy.
    #[arg(long)]
    pub preset: Option<String>,
    /// Replications (defaults to the preset).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Repro noise draws per replication.
    #[arg(long)]
    pub d: Option<usize>,
    /// Synthetic responses per candidate.
    #[arg(long)]
    pub m: Option<usize>,
    /// Surrogate loss: hinge or logistic.
    #[arg(long)]
    pub loss: Option<SurrogateLoss>,
    /// Confidence level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Nuisance handling: mle or profile.
    #[arg(long)]
    pub mode: Option<NuisanceMode>,
    /// Multiplies n, p, and d of the preset.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Outputs to compute: candidate, coef, caseprob, mcs, or all.
    #[arg(long)]
    pub parts: Option<Parts>,
    /// Monte-Carlo size for population targets of misspecified designs.
    #[arg(long)]
    pub n_mc: Option<usize>,
    /// Full JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Settings shared by every subcommand.
struct Context {
    file: ConfigFile,
    seed: u64,
}

impl Context {
    fn path(&self, flag: &Option<PathBuf>, key: &str) -> Option<PathBuf> {
        flag.clone().or_else(|| self.file.raw(key).map(PathBuf::from))
    }

    fn required_path(&self, flag: &Option<PathBuf>, key: &str) -> CliResult<PathBuf> {
        self.path(flag, key).ok_or_else(|| CliError::input(format!("missing --{}", key.replace('_', "-"))))
    }

    fn dataset(&self, flag: &Option<PathBuf>) -> CliResult<Dataset> {
        read_dataset(&self.required_path(flag, "data")?)
    }

    /// Loads the candidate set from JSON, or builds it from the selection settings.
    fn candidates(&self, flag: &Option<PathBuf>, sel: &SelectionArgs, data: &Dataset) -> CliResult<CandidateSet> {
        match self.path(flag, "candidates") {
            Some(path) => {
                let cand: CandidateSet = read_json(&path)?;
                cand.validate(data.p()).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                Ok(cand)
            }
            None => build_candidates(self, sel, data),
        }
    }
}

fn build_candidates(ctx: &Context, sel: &SelectionArgs, data: &Dataset) -> CliResult<CandidateSet> {
    let f = &ctx.file;
    let d = check_positive("d", f.pick_or(sel.d, "d", DEFAULT_D)?)?;
    let s_u = check_positive("s_u", f.pick_or(sel.s_u, "s_u", DEFAULT_SPARSITY_BOUND)?)?;
    let loss = f.pick_or(sel.loss, "loss", SurrogateLoss::Hinge)?;
    let xi = f.pick_or(sel.xi_grid.clone(), "xi_grid", NumberList(DEFAULT_XI_GRID.to_vec()))?;
    let cand = build_candidate_set(data, d, s_u, loss, &xi.0, ctx.seed)?;
    for w in &cand.warnings {
        log::warn!("repro draw {}: {}", w.draw, w.message);
    }
    Ok(cand)
}

fn install_threads(threads: usize) {
    // a second call in one process (tests) keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> CliResult<()> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let env = std::env::var(THREADS_ENV).ok();
    install_threads(resolve_threads(cli.threads, env.as_deref(), &file)?);
    let seed = file.pick_or(cli.seed, "seed", DEFAULT_SEED)?;
    let ctx = Context { file, seed };
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&ctx, &a),
        Command::Candidate(a) => cmd_candidate(&ctx, &a),
        Command::Infer(a) => cmd_infer(&ctx, &a),
        Command::ModelCs(a) => cmd_model_cs(&ctx, &a),
        Command::Benchmark(a) => cmd_benchmark(&ctx, &a),
    }
}

fn cmd_simulate(ctx: &Context, a: &SimulateArgs) -> CliResult<()> {
    let f = &ctx.file;
    let model = f.pick_or(a.design, "design", SimModel::M3)?;
    let scale = f.pick_or(a.scale, "scale", 1.0)?;
    let preset = Preset::by_name(&format!("{}-desk", model.name()))?.scaled(scale)?;
    let n = check_positive("n", f.pick_or(a.n, "n", preset.n)?)?;
    let p = check_positive("p", f.pick_or(a.p, "p", preset.p)?)?;
    let design = SimDesign::with_size(model, n, p, preset.d);
    let sim = simulate(&design, ctx.seed)?;
    emit(ctx.path(&a.out, "out").as_deref(), &dataset_csv(&sim.data))?;
    if let Some(path) = ctx.path(&a.u_out, "u_out") {
        emit(Some(&path), &uniforms_csv(&sim.u))?;
    }
    if let Some(path) = ctx.path(&a.targets_out, "targets_out") {
        let n_mc = f.pick_or(a.n_mc, "n_mc", DEFAULT_N_MC)?;
        let s_u = DEFAULT_SPARSITY_BOUND.min(p);
        let pop = population_targets(&design, s_u, n_mc, ctx.seed)?;
        let mut csv = String::from("size,tau,mean_loglik,ebic\n");
        for s in &pop.steps {
            let tau: Vec<String> = s.tau.one_based().iter().map(ToString::to_string).collect();
            csv.push_str(&format!("{},\"{}\",{},{}\n", s.tau.len(), tau.join(" "), s.mean_loglik, s.ebic));
        }
        emit(Some(&path), &csv)?;
    }
    Ok(())
}

fn cmd_candidate(ctx: &Context, a: &CandidateArgs) -> CliResult<()> {
    let data = ctx.dataset(&a.data)?;
    let cand = build_candidates(ctx, &a.selection, &data)?;
    emit(ctx.path(&a.out, "out").as_deref(), &to_checked_json(&cand)?)
}

fn check_nonempty(cand: &CandidateSet) -> CliResult<()> {
    if cand.is_empty() {
        return Err(CliError::Numeric("candidate set is empty".into()));
    }
    Ok(())
}

fn cmd_infer(ctx: &Context, a: &InferArgs) -> CliResult<()> {
    let f = &ctx.file;
    let data = ctx.dataset(&a.data)?;
    let alpha = check_alpha(f.pick_or(a.alpha, "alpha", DEFAULT_ALPHA)?)?;
    // argument errors come before the (possibly long) candidate build
    let p = data.p();
    let matrix = |flag: &Option<PathBuf>, key: &str| -> CliResult<DMatrix<f64>> { read_matrix(&ctx.required_path(flag, key)?, p) };
    let text = match a.target {
        InferTarget::BetaJ => {
            let j = f.pick(a.j, "j")?.ok_or_else(|| CliError::input("beta-j needs --j"))?;
            if j == 0 || j > p {
                return Err(CliError::input(format!("column j={j} outside 1..={p}")));
            }
            let cand = ctx.candidates(&a.candidates, &a.selection, &data)?;
            check_nonempty(&cand)?;
            to_checked_json(&confset_beta_j(&data, &cand, j - 1, alpha)?)?
        }
        InferTarget::Abeta => {
            let m = matrix(&a.a, "a")?;
            let cand = ctx.candidates(&a.candidates, &a.selection, &data)?;
            check_nonempty(&cand)?;
            to_checked_json(&confset_abeta(&data, &cand, &m, alpha)?)?
        }
        InferTarget::Beta => {
            let cand = ctx.candidates(&a.candidates, &a.selection, &data)?;
            check_nonempty(&cand)?;
            to_checked_json(&confset_beta(&data, &cand, alpha)?)?
        }
        InferTarget::Caseprob => {
            let x_new = matrix(&a.x_new, "x_new")?;
            let cand = ctx.candidates(&a.candidates, &a.selection, &data)?;
            check_nonempty(&cand)?;
            to_checked_json(&confset_case_prob(&data, &cand, &x_new, alpha)?)?
        }
    };
    emit(ctx.path(&a.out, "out").as_deref(), &text)
}

fn cmd_model_cs(ctx: &Context, a: &ModelCsArgs) -> CliResult<()> {
    let f = &ctx.file;
    let data = ctx.dataset(&a.data)?;
    let alpha = check_alpha(f.pick_or(a.alpha, "alpha", DEFAULT_ALPHA)?)?;
    let m = check_positive("m", f.pick_or(a.m, "m", DEFAULT_M)?)?;
    let mode = f.pick_or(a.mode, "mode", NuisanceMode::Mle)?;
    let cand = ctx.candidates(&a.candidates, &a.selection, &data)?;
    check_nonempty(&cand)?;
    let mcs = model_confidence_set(&data, &cand, alpha, m, mode, ctx.seed)?;
    if let Some(t) = mcs.models.iter().find(|t| !cand.contains(&t.tau)) {
        return Err(CliError::Numeric(format!("retained model {} is not a candidate", t.tau)));
    }
    emit(ctx.path(&a.out, "out").as_deref(), &to_checked_json(&mcs)?)
}

fn cmd_benchmark(ctx: &Context, a: &BenchmarkArgs) -> CliResult<()> {
    let f = &ctx.file;
    let name = f.pick_or(a.preset.clone(), "preset", "m3-desk".to_string())?;
    let mut preset = Preset::lookup(&name)?.scaled(f.pick_or(a.scale, "scale", 1.0)?)?;
    preset.reps = f.pick_or(a.reps, "reps", preset.reps)?;
    if preset.reps == 0 {
        return Err(CliError::input("reps must be at least 1"));
    }
    preset.d = check_positive("d", f.pick_or(a.d, "d", preset.d)?)?;
    preset.m = check_positive("m", f.pick_or(a.m, "m", preset.m)?)?;
    preset.loss = f.pick_or(a.loss, "loss", preset.loss)?;
    preset.alpha = check_alpha(f.pick_or(a.alpha, "alpha", preset.alpha)?)?;
    preset.mode = f.pick_or(a.mode, "mode", preset.mode)?;
    preset.n_mc = f.pick_or(a.n_mc, "n_mc", preset.n_mc)?;
    let parts = f.pick_or(a.parts, "parts", Parts::default())?;
    let report = run_benchmark(&preset, parts, ctx.seed)?;
    emit(None, &format_table(&report))?;
    if let Some(path) = ctx.path(&a.out, "out") {
        emit(Some(Path::new(&path)), &to_json(&report)?)?;
    }
    if report.completed == 0 {
        return Err(CliError::Numeric("every replication failed".into()));
    }
    Ok(())
}
