//! Monte Carlo estimation of the hypothesis-test bound for Langevin dynamics.
//!
//! Each repetition draws a width-2 supersample, `U`, `J` and an evaluation
//! set, then runs both branches `U_J = 1` and `U_J = 2` from the shared
//! `W_0`. Per step it stores `(η, β, ‖ζ‖², ΔY)`; since `ΔY` does not depend
//! on the decision function, any `θ` can be re-scored afterwards without
//! re-running the dynamics. Repetitions run in parallel and are reduced in
//! index order, so results are bit-identical for a given master seed.
//!
//! Curves have one row per `t = 1..=T`: bounds use the steps `s < t`, the
//! per-step diagnostics describe step `s = t − 1`, and risks are measured at
//! `W_t`.

use std::f64::consts::SQRT_2;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    li_data_dependent_curve, li_lipschitz_from_sum, negrea_data_dependent_curve, negrea_lipschitz_from_sum,
    BaselineConfig, BaselineKind,
};
use crate::error::{Error, Result};
use crate::ht_prior::{y_increments, DecisionFunction, HypothesisTestState};
use crate::ld_engine::{run_ld_observed, sample_supersample_with_eval, LDSchedule};
use crate::model_zoo::{DataSource, Model, ParameterVector, Sampler};
use crate::seeding::{derive_seed, SeedDomain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaFamily {
    Erf,
    Tanh,
    Sign,
    ConstantHalf,
}

impl ThetaFamily {
    pub fn of(theta: &DecisionFunction) -> Self {
        match theta {
            DecisionFunction::Erf { .. } => ThetaFamily::Erf,
            DecisionFunction::Tanh { .. } => ThetaFamily::Tanh,
            DecisionFunction::Sign => ThetaFamily::Sign,
            DecisionFunction::ConstantHalf => ThetaFamily::ConstantHalf,
        }
    }

    fn at(self, a: f64) -> DecisionFunction {
        match self {
            ThetaFamily::Erf => DecisionFunction::Erf { a },
            ThetaFamily::Tanh => DecisionFunction::Tanh { a },
            ThetaFamily::Sign => DecisionFunction::Sign,
            ThetaFamily::ConstantHalf => DecisionFunction::ConstantHalf,
        }
    }

    fn scaled(self) -> bool {
        matches!(self, ThetaFamily::Erf | ThetaFamily::Tanh)
    }
}

/// Log-spaced grid over the scale `a` plus golden-section refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaSearch {
    pub families: Vec<ThetaFamily>,
    pub a_min: f64,
    pub a_max: f64,
    pub grid_points: usize,
    pub refine_iters: usize,
}

impl Default for ThetaSearch {
    fn default() -> Self {
        Self {
            families: vec![ThetaFamily::Erf, ThetaFamily::Tanh, ThetaFamily::Sign, ThetaFamily::ConstantHalf],
            a_min: 1e-3,
            a_max: 1e4,
            grid_points: 43,
            refine_iters: 40,
        }
    }
}

impl ThetaSearch {
    pub fn only(family: ThetaFamily) -> Self {
        Self {
            families: vec![family],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.families.is_empty() {
            return Err(Error::validation("decision-function search has no families"));
        }
        if self.families.iter().any(|f| f.scaled())
            && (!(self.a_min > 0.0 && self.a_max.is_finite() && self.a_min < self.a_max) || self.grid_points < 2)
        {
            return Err(Error::validation("scale grid needs 0 < a_min < a_max and at least two points"));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let (lo, hi) = (self.a_min.ln(), self.a_max.ln());
        let mut grid: Vec<f64> = (0..self.grid_points)
            .map(|i| (lo + (hi - lo) * i as f64 / (self.grid_points - 1) as f64).exp())
            .collect();
        grid[0] = self.a_min;
        grid[self.grid_points - 1] = self.a_max;
        grid
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

fn default_repetitions() -> usize {
    40
}

fn default_theta() -> DecisionFunction {
    DecisionFunction::Erf { a: 1.0 }
}

fn default_replicates() -> usize {
    1
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    pub model: Model,
    pub n: usize,
    pub schedule: LDSchedule,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Decision function of the reported `cmi` curve.
    #[serde(default = "default_theta")]
    pub theta: DecisionFunction,
    /// Families searched for the held-out `cmi_opt` curve; `None` skips it.
    #[serde(default = "default_search")]
    pub theta_search: Option<ThetaSearch>,
    #[serde(default)]
    pub baselines: BaselineConfig,
    /// Held-out points per repetition; defaults to `10·n`.
    #[serde(default)]
    pub eval_size: Option<usize>,
    /// Independent noise draws per branch used to estimate the inner
    /// conditional expectation.
    #[serde(default = "default_replicates")]
    pub noise_replicates: usize,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_search() -> Option<ThetaSearch> {
    Some(ThetaSearch::default())
}

impl Default for ExperimentConfig {
    /// Logistic regression on two overlapping 20-dimensional blobs with
    /// `n = 50`, `T = 500`, `η = 0.01`, `β = 10⁴` and `R = 40`.
    fn default() -> Self {
        Self {
            data: DataSource::symmetric_blobs(20, 1.0, 1.0, 2024),
            model: Model::Logistic {
                input_dim: 20,
                classes: 2,
            },
            n: 50,
            schedule: LDSchedule::Constant {
                steps: 500,
                eta: 0.01,
                beta: 1e4,
            },
            repetitions: default_repetitions(),
            master_seed: 0,
            theta: default_theta(),
            theta_search: default_search(),
            baselines: BaselineConfig::default(),
            eval_size: None,
            noise_replicates: 1,
            output: OutputPaths::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::validation("experiments need n >= 2"));
        }
        if self.repetitions < 2 {
            return Err(Error::validation("experiments need at least two repetitions"));
        }
        if self.noise_replicates == 0 {
            return Err(Error::validation("at least one noise replicate is required"));
        }
        if self.eval_size == Some(0) {
            return Err(Error::validation("evaluation set must be nonempty"));
        }
        self.model.validate()?;
        self.schedule.validate()?;
        self.theta.validate()?;
        self.baselines.validate()?;
        if let Some(search) = &self.theta_search {
            search.validate()?;
            if self.repetitions < 4 {
                return Err(Error::validation("the held-out search needs at least two repetitions per half"));
            }
        }
        if let DataSource::GaussianBlobs { means, .. } = &self.data {
            let dim = means.first().map_or(0, Vec::len);
            let classes_ok = self.model.label_classes().is_none_or(|c| c == means.len());
            if dim != self.model.input_dim() || !classes_ok {
                return Err(Error::validation(format!(
                    "data has {} classes of dimension {dim}, model expects {} of dimension {}",
                    means.len(),
                    self.model.classes(),
                    self.model.input_dim()
                )));
            }
        }
        Ok(())
    }

    pub fn eval_points(&self) -> usize {
        self.eval_size.unwrap_or(10 * self.n)
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps()
    }
}

/// What the bound needs from one step; `θ` is applied afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepData {
    pub eta: f64,
    pub beta: f64,
    pub zeta_sq: f64,
    /// `ΔY` from the increments before this step.
    pub delta_y: f64,
}

impl StepData {
    pub fn summand(&self, theta: &DecisionFunction, indicator: f64) -> f64 {
        let g = indicator - theta.eval(self.delta_y);
        self.beta * self.eta * self.zeta_sq * g * g
    }
}

/// One branch `U_J = u_j` of one repetition. Diagnostics are averaged over
/// the noise replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchRun {
    pub u_j: u8,
    pub replicates: Vec<Vec<StepData>>,
    pub incoherence: Vec<f64>,
    pub mean_sq_grad: Vec<f64>,
    pub max_grad_norm: f64,
    /// 0-1 risks at `W_1..W_T`.
    pub train01: Vec<f64>,
    pub test01: Vec<f64>,
}

impl BranchRun {
    pub fn indicator(&self) -> f64 {
        if self.u_j == 1 {
            1.0
        } else {
            0.0
        }
    }

    pub fn steps(&self) -> usize {
        self.replicates.first().map_or(0, Vec::len)
    }

    /// `Σ_{s<t} E[summand_s]` for `t = 1..=T`.
    pub fn cumulative_summands(&self, theta: &DecisionFunction) -> Vec<f64> {
        let ind = self.indicator();
        let reps = self.replicates.len() as f64;
        let mut acc = vec![0.0; self.steps()];
        for rep in &self.replicates {
            for (a, s) in acc.iter_mut().zip(rep) {
                *a += s.summand(theta, ind);
            }
        }
        let mut run = 0.0;
        for a in acc.iter_mut() {
            run += *a / reps;
            *a = run;
        }
        acc
    }

    /// `V_u = √(Σ_t E[summand_t])` over the full horizon.
    pub fn v(&self, theta: &DecisionFunction) -> f64 {
        let ind = self.indicator();
        let total: f64 = self.replicates.iter().flatten().map(|s| s.summand(theta, ind)).sum();
        (total / self.replicates.len() as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub rep: usize,
    pub branches: [BranchRun; 2],
}

impl RepetitionResult {
    /// `(V_1 + V_2)/(2√2 n)` at the final step.
    pub fn bound(&self, theta: &DecisionFunction, n: usize) -> f64 {
        (self.branches[0].v(theta) + self.branches[1].v(theta)) / (2.0 * SQRT_2 * n as f64)
    }

    /// The same quantity at every horizon `t = 1..=T`.
    pub fn bound_curve(&self, theta: &DecisionFunction, n: usize) -> Vec<f64> {
        let a = self.branches[0].cumulative_summands(theta);
        let b = self.branches[1].cumulative_summands(theta);
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x.sqrt() + y.sqrt()) / (2.0 * SQRT_2 * n as f64))
            .collect()
    }
}

/// Data and initialization shared by every repetition of an experiment.
pub struct ExperimentContext {
    pub sampler: Sampler,
    pub init: ParameterVector,
}

impl ExperimentContext {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let sampler = config.data.materialize()?;
        let init = config.model.init_params(derive_seed(config.master_seed, SeedDomain::Init, 0));
        Ok(Self { sampler, init })
    }
}

/// Runs both branches of repetition `rep`.
pub fn run_repetition(config: &ExperimentConfig, ctx: &ExperimentContext, rep: usize) -> Result<RepetitionResult> {
    let n = config.n;
    let data_seed = derive_seed(config.master_seed, SeedDomain::Data, rep as u64);
    let (pair, eval) = sample_supersample_with_eval(&ctx.sampler, n, config.eval_points(), data_seed)?;
    let model = &config.model;
    let steps = config.steps();
    let q_count = config.noise_replicates;
    let branch = |u_j: u8| -> Result<BranchRun> {
        let train = pair.branch_training_set(u_j)?;
        let mut out = BranchRun {
            u_j,
            replicates: Vec::with_capacity(q_count),
            incoherence: vec![0.0; steps],
            mean_sq_grad: vec![0.0; steps],
            max_grad_norm: 0.0,
            train01: vec![0.0; steps],
            test01: vec![0.0; steps],
        };
        for q in 0..q_count {
            let index = ((rep * 2 + u_j as usize - 1) * q_count + q) as u64;
            let noise_seed = derive_seed(config.master_seed, SeedDomain::Noise, index);
            let mut state = HypothesisTestState::new();
            let mut records = Vec::with_capacity(steps);
            run_ld_observed(model, &pair, u_j, &config.schedule, &ctx.init, noise_seed, |s| {
                let zeta_sq = s.cand[0].iter().zip(s.cand[1]).map(|(a, b)| (a - b) * (a - b)).sum();
                records.push(StepData {
                    eta: s.eta,
                    beta: s.beta,
                    zeta_sq,
                    delta_y: state.delta(),
                });
                let (i1, i2) = y_increments(s.w_t, s.w_next, s.eta, s.beta, s.loo, s.cand[0], s.cand[1], n)?;
                state = HypothesisTestState {
                    y1: state.y1 + i1,
                    y2: state.y2 + i2,
                    t: state.t + 1,
                };
                let t = s.t;
                out.incoherence[t] += s.incoherence;
                out.mean_sq_grad[t] += s.mean_sq_grad_norm;
                out.max_grad_norm = out.max_grad_norm.max(s.max_grad_norm);
                out.train01[t] += model.zero_one_risk(s.w_next, &train)?;
                out.test01[t] += model.zero_one_risk(s.w_next, &eval)?;
                Ok(())
            })?;
            out.replicates.push(records);
        }
        let inv = 1.0 / q_count as f64;
        for v in [&mut out.incoherence, &mut out.mean_sq_grad, &mut out.train01, &mut out.test01] {
            v.iter_mut().for_each(|x| *x *= inv);
        }
        Ok(out)
    };
    Ok(RepetitionResult {
        rep,
        branches: [branch(1)?, branch(2)?],
    })
}

/// All repetitions, in index order.
pub fn run_repetitions(config: &ExperimentConfig) -> Result<Vec<RepetitionResult>> {
    let ctx = ExperimentContext::new(config)?;
    (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(config, &ctx, r))
        .collect()
}

/// Result of the held-out decision-function search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaOpt {
    pub theta: DecisionFunction,
    pub train_bound: f64,
    /// Bound evaluated on the held-out half only.
    pub test_bound: f64,
    pub train_reps: Vec<usize>,
    pub test_reps: Vec<usize>,
    /// Best train-half value per family, in search order.
    pub candidates: Vec<(DecisionFunction, f64)>,
}

fn mean_bound(reps: &[&RepetitionResult], theta: &DecisionFunction, n: usize) -> f64 {
    reps.iter().map(|r| r.bound(theta, n)).sum::<f64>() / reps.len() as f64
}

/// Minimizes the final-step bound over the search families on the even
/// repetitions and reports its value on the odd ones. Ties keep the
/// earlier candidate, which on the grid is the smaller scale.
pub fn optimize_theta(reps: &[RepetitionResult], search: &ThetaSearch, n: usize) -> Result<ThetaOpt> {
    search.validate()?;
    let (train, test): (Vec<&RepetitionResult>, Vec<&RepetitionResult>) = reps.iter().partition(|r| r.rep % 2 == 0);
    if train.len() < 2 || test.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 4,
            available: reps.len(),
        });
    }
    let objective = |th: &DecisionFunction| mean_bound(&train, th, n);
    let mut candidates = vec![];
    for family in &search.families {
        if !family.scaled() {
            let th = family.at(1.0);
            candidates.push((th, objective(&th)));
            continue;
        }
        let grid = search.grid();
        let values: Vec<f64> = grid.iter().map(|&a| objective(&family.at(a))).collect();
        let mut best = 0;
        for (i, &v) in values.iter().enumerate() {
            if v < values[best] {
                best = i;
            }
        }
        let mut best_a = grid[best];
        let mut best_v = values[best];
        // golden-section on log a between the neighbouring grid points
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut lo = grid[best.saturating_sub(1)].ln();
        let mut hi = grid[(best + 1).min(grid.len() - 1)].ln();
        let f = |x: f64| objective(&family.at(x.exp()));
        let mut x1 = hi - g * (hi - lo);
        let mut x2 = lo + g * (hi - lo);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..search.refine_iters {
            if f1 <= f2 {
                hi = x2;
                x2 = x1;
                f2 = f1;
                x1 = hi - g * (hi - lo);
                f1 = f(x1);
            } else {
                lo = x1;
                x1 = x2;
                f1 = f2;
                x2 = lo + g * (hi - lo);
                f2 = f(x2);
            }
        }
        let (xr, fr) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
        if fr < best_v {
            best_v = fr;
            best_a = xr.exp();
        }
        candidates.push((family.at(best_a), best_v));
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.1 < candidates[best].1 {
            best = i;
        }
    }
    let (theta, train_bound) = candidates[best];
    Ok(ThetaOpt {
        theta,
        train_bound,
        test_bound: mean_bound(&test, &theta, n),
        train_reps: train.iter().map(|r| r.rep).collect(),
        test_reps: test.iter().map(|r| r.rep).collect(),
        candidates,
    })
}

/// Repetition-averaged curves, one entry per `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCurve {
    pub t: Vec<usize>,
    pub cmi_mean: Vec<f64>,
    pub cmi_stderr: Vec<f64>,
    pub cmi_opt_mean: Option<Vec<f64>>,
    pub li_dd: Option<Vec<f64>>,
    pub negrea_dd: Option<Vec<f64>>,
    pub li_lip: Option<Vec<f64>>,
    pub negrea_lip: Option<Vec<f64>>,
    pub test_err_sq_mean: Vec<f64>,
    pub zeta_sq_mean: Vec<f64>,
    pub incoherence_mean: Vec<f64>,
    pub train01: Vec<f64>,
    pub test01: Vec<f64>,
    pub ege_hat: Vec<f64>,
    pub ege_stderr: Vec<f64>,
}

pub const CURVE_COLUMNS: [&str; 14] = [
    "t",
    "cmi_mean",
    "cmi_stderr",
    "cmi_opt_mean",
    "li_dd",
    "negrea_dd",
    "li_lip",
    "negrea_lip",
    "test_err_sq_mean",
    "zeta_sq_mean",
    "incoherence_mean",
    "train01",
    "test01",
    "ege_hat",
];

impl BoundCurve {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Writes the fixed CSV schema; disabled columns are left empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(CURVE_COLUMNS)?;
        let opt = |c: &Option<Vec<f64>>, i: usize| c.as_ref().map_or(String::new(), |v| v[i].to_string());
        for i in 0..self.len() {
            w.write_record([
                self.t[i].to_string(),
                self.cmi_mean[i].to_string(),
                self.cmi_stderr[i].to_string(),
                opt(&self.cmi_opt_mean, i),
                opt(&self.li_dd, i),
                opt(&self.negrea_dd, i),
                opt(&self.li_lip, i),
                opt(&self.negrea_lip, i),
                self.test_err_sq_mean[i].to_string(),
                self.zeta_sq_mean[i].to_string(),
                self.incoherence_mean[i].to_string(),
                self.train01[i].to_string(),
                self.test01[i].to_string(),
                self.ege_hat[i].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Final-iteration numbers of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub n: usize,
    pub steps: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub theta: String,
    pub cmi: f64,
    pub cmi_stderr: f64,
    pub cmi_opt: Option<f64>,
    /// The configured `θ` on the same held-out repetitions as `cmi_opt`.
    pub cmi_heldout: Option<f64>,
    pub theta_opt: Option<String>,
    pub theta_opt_train_bound: Option<f64>,
    pub train_reps: Vec<usize>,
    pub test_reps: Vec<usize>,
    pub li_dd: Option<f64>,
    pub negrea_dd: Option<f64>,
    pub li_lip: Option<f64>,
    pub negrea_lip: Option<f64>,
    pub lipschitz_hat: f64,
    pub train01: f64,
    pub test01: f64,
    pub ege_hat: f64,
    pub ege_stderr: f64,
    pub baseline_note: String,
}

pub const BASELINE_NOTE: &str = "data-dependent baseline constants are pinned by agreement with their Lipschitz forms at the worst case";

impl ExperimentSummary {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Everything one experiment produces.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub reps: Vec<RepetitionResult>,
    pub curve: BoundCurve,
    pub summary: ExperimentSummary,
    pub theta_opt: Option<ThetaOpt>,
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Builds the curves and summary from finished repetitions.
pub fn summarize(config: &ExperimentConfig, reps: Vec<RepetitionResult>) -> Result<ExperimentOutput> {
    if reps.is_empty() {
        return Err(Error::validation("no repetitions to summarize"));
    }
    let n = config.n;
    let steps = reps[0].branches[0].steps();
    let schedule = config.schedule.truncated(steps);
    let r = reps.len();

    let per_rep: Vec<Vec<f64>> = reps.iter().map(|rep| rep.bound_curve(&config.theta, n)).collect();
    let mut cmi_mean = vec![0.0; steps];
    let mut cmi_stderr = vec![0.0; steps];
    for t in 0..steps {
        let col: Vec<f64> = per_rep.iter().map(|c| c[t]).collect();
        (cmi_mean[t], cmi_stderr[t]) = mean_and_stderr(&col);
    }

    let theta_opt = match &config.theta_search {
        Some(search) => Some(optimize_theta(&reps, search, n)?),
        None => None,
    };
    // the search's held-out half, or every repetition without a search
    let (diag_theta, diag_reps): (DecisionFunction, Vec<&RepetitionResult>) = match &theta_opt {
        Some(opt) => (opt.theta, reps.iter().filter(|r| opt.test_reps.contains(&r.rep)).collect()),
        None => (config.theta, reps.iter().collect()),
    };
    let cmi_opt_mean = theta_opt.as_ref().map(|_| {
        let mut acc = vec![0.0; steps];
        for rep in &diag_reps {
            acc.iter_mut()
                .zip(rep.bound_curve(&diag_theta, n))
                .for_each(|(a, v)| *a += v);
        }
        acc.iter().map(|a| a / diag_reps.len() as f64).collect::<Vec<f64>>()
    });

    let mut test_err_sq_mean = vec![0.0; steps];
    let mut diag_cells = 0.0;
    for rep in &diag_reps {
        for b in &rep.branches {
            let ind = b.indicator();
            for q in &b.replicates {
                diag_cells += 1.0;
                for (acc, s) in test_err_sq_mean.iter_mut().zip(q) {
                    let g = ind - diag_theta.eval(s.delta_y);
                    *acc += g * g;
                }
            }
        }
    }
    test_err_sq_mean.iter_mut().for_each(|v| *v /= diag_cells);

    let branches: Vec<&BranchRun> = reps.iter().flat_map(|r| r.branches.iter()).collect();
    let cells = branches.len() as f64;
    let mut zeta_sq_mean = vec![0.0; steps];
    let mut incoherence_mean = vec![0.0; steps];
    let mut train01 = vec![0.0; steps];
    let mut test01 = vec![0.0; steps];
    for b in &branches {
        let q = b.replicates.len() as f64;
        for t in 0..steps {
            zeta_sq_mean[t] += b.replicates.iter().map(|rep| rep[t].zeta_sq).sum::<f64>() / q / cells;
            incoherence_mean[t] += b.incoherence[t] / cells;
            train01[t] += b.train01[t] / cells;
            test01[t] += b.test01[t] / cells;
        }
    }
    // one generalization-gap sample per repetition: the mean of its branches
    let mut ege_hat = vec![0.0; steps];
    let mut ege_stderr = vec![0.0; steps];
    for t in 0..steps {
        let col: Vec<f64> = reps
            .iter()
            .map(|rep| rep.branches.iter().map(|b| b.test01[t] - b.train01[t]).sum::<f64>() / 2.0)
            .collect();
        (ege_hat[t], ege_stderr[t]) = mean_and_stderr(&col);
    }

    let lipschitz_hat = branches.iter().map(|b| b.max_grad_norm).fold(0.0, f64::max);
    let lip = config.baselines.resolve_lipschitz(lipschitz_hat);
    let on = |k| config.baselines.enabled(k);
    let sums: Vec<f64> = (1..=steps).map(|t| schedule.beta_eta_sum(t)).collect();
    let li_lip = on(BaselineKind::LiLipschitz).then(|| sums.iter().map(|&s| li_lipschitz_from_sum(s, lip, n)).collect());
    let negrea_lip = if on(BaselineKind::NegreaLipschitz) {
        Some(sums.iter().map(|&s| negrea_lipschitz_from_sum(s, lip, n)).collect::<Result<Vec<f64>>>()?)
    } else {
        None
    };
    let li_dd = if on(BaselineKind::LiDataDependent) {
        let runs: Vec<Vec<f64>> = branches.iter().map(|b| b.mean_sq_grad.clone()).collect();
        Some(li_data_dependent_curve(&runs, &schedule, n)?)
    } else {
        None
    };
    let negrea_dd = if on(BaselineKind::NegreaDataDependent) {
        let runs: Vec<Vec<f64>> = branches.iter().map(|b| b.incoherence.clone()).collect();
        Some(negrea_data_dependent_curve(&runs, &schedule, n)?)
    } else {
        None
    };

    let last = |v: &[f64]| v.last().copied().unwrap_or(0.0);
    let last_opt = |v: &Option<Vec<f64>>| v.as_ref().map(|v| last(v));
    let summary = ExperimentSummary {
        n,
        steps,
        repetitions: r,
        master_seed: config.master_seed,
        theta: config.theta.to_string(),
        cmi: last(&cmi_mean),
        cmi_stderr: last(&cmi_stderr),
        cmi_opt: theta_opt.as_ref().map(|o| o.test_bound),
        cmi_heldout: theta_opt.as_ref().map(|_| mean_bound(&diag_reps, &config.theta, n)),
        theta_opt: theta_opt.as_ref().map(|o| o.theta.to_string()),
        theta_opt_train_bound: theta_opt.as_ref().map(|o| o.train_bound),
        train_reps: theta_opt.as_ref().map_or(vec![], |o| o.train_reps.clone()),
        test_reps: theta_opt.as_ref().map_or(vec![], |o| o.test_reps.clone()),
        li_dd: last_opt(&li_dd),
        negrea_dd: last_opt(&negrea_dd),
        li_lip: last_opt(&li_lip),
        negrea_lip: last_opt(&negrea_lip),
        lipschitz_hat,
        train01: last(&train01),
        test01: last(&test01),
        ege_hat: last(&ege_hat),
        ege_stderr: last(&ege_stderr),
        baseline_note: BASELINE_NOTE.to_string(),
    };
    let curve = BoundCurve {
        t: (1..=steps).collect(),
        cmi_mean,
        cmi_stderr,
        cmi_opt_mean,
        li_dd,
        negrea_dd,
        li_lip,
        negrea_lip,
        test_err_sq_mean,
        zeta_sq_mean,
        incoherence_mean,
        train01,
        test01,
        ege_hat,
        ege_stderr,
    };
    Ok(ExperimentOutput {
        reps,
        curve,
        summary,
        theta_opt,
    })
}

/// Runs every repetition and summarizes.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let reps = run_repetitions(config)?;
    summarize(config, reps)
}

pub fn estimate_curves(config: &ExperimentConfig) -> Result<BoundCurve> {
    Ok(run_experiment(config)?.curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ht_prior::{accumulate_bound, CellRecords, StepKLRecord};
    use approx::assert_abs_diff_eq;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::symmetric_blobs(3, 1.0, 1.0, 5),
            model: Model::Logistic {
                input_dim: 3,
                classes: 2,
            },
            n: 8,
            schedule: LDSchedule::Constant {
                steps: 30,
                eta: 0.05,
                beta: 200.0,
            },
            repetitions: 4,
            eval_size: Some(20),
            ..ExperimentConfig::default()
        }
    }

    fn synthetic_branch(u_j: u8, steps: usize, zeta_sq: f64, delta: impl Fn(usize) -> f64) -> BranchRun {
        BranchRun {
            u_j,
            replicates: vec![(0..steps)
                .map(|t| StepData {
                    eta: 0.01,
                    beta: 1.0,
                    zeta_sq,
                    delta_y: delta(t),
                })
                .collect()],
            incoherence: vec![0.0; steps],
            mean_sq_grad: vec![0.0; steps],
            max_grad_norm: 0.0,
            train01: vec![0.0; steps],
            test01: vec![0.0; steps],
        }
    }

    #[test]
    fn default_config_round_trips() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&text).unwrap(), c);
        assert_eq!(c.eval_points(), 500);
    }

    #[test]
    fn repetitions_are_branch_consistent() {
        let c = small_config();
        let ctx = ExperimentContext::new(&c).unwrap();
        let rep = run_repetition(&c, &ctx, 1).unwrap();
        assert_eq!(rep, run_repetition(&c, &ctx, 1).unwrap());
        // both branches see the same candidates, so the same ζ at t = 0
        assert_abs_diff_eq!(
            rep.branches[0].replicates[0][0].zeta_sq,
            rep.branches[1].replicates[0][0].zeta_sq,
            epsilon = 1e-15
        );
        assert_eq!(rep.branches[0].replicates[0][0].delta_y, 0.0);
    }

    #[test]
    fn v_form_matches_pooled_records() {
        let c = small_config();
        let reps = run_repetitions(&c).unwrap();
        let th = DecisionFunction::Erf { a: 0.7 };
        let direct = reps.iter().map(|r| r.bound(&th, c.n)).sum::<f64>() / reps.len() as f64;
        let mut cells = vec![];
        for r in &reps {
            for b in &r.branches {
                let ind = b.u_j % 2;
                let recs = b.replicates[0]
                    .iter()
                    .enumerate()
                    .map(|(t, s)| StepKLRecord::new(t, s.eta, s.beta, c.n, s.zeta_sq, s.delta_y, ind, &th).unwrap())
                    .collect();
                cells.push(CellRecords::single(recs));
            }
        }
        assert_abs_diff_eq!(direct, accumulate_bound(&cells, c.n).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn identical_candidates_give_zero() {
        let rep = RepetitionResult {
            rep: 0,
            branches: [synthetic_branch(1, 10, 0.0, |_| 0.0), synthetic_branch(2, 10, 0.0, |_| 0.0)],
        };
        assert_eq!(rep.bound(&DecisionFunction::ConstantHalf, 5), 0.0);
    }

    #[test]
    fn constant_half_collapse_and_zero_stderr() {
        // identical repetitions: stderr 0, and the θ = 1/2 value collapses to
        // (1/(n√2))·√(T·βη‖ζ‖²/4)
        let mk = |rep| RepetitionResult {
            rep,
            branches: [synthetic_branch(1, 100, 4.0, |_| 0.0), synthetic_branch(2, 100, 4.0, |_| 0.0)],
        };
        let config = ExperimentConfig {
            n: 10,
            repetitions: 2,
            theta: DecisionFunction::ConstantHalf,
            theta_search: None,
            baselines: BaselineConfig::none(),
            schedule: LDSchedule::Constant {
                steps: 100,
                eta: 0.01,
                beta: 1.0,
            },
            ..ExperimentConfig::default()
        };
        let out = summarize(&config, vec![mk(0), mk(1)]).unwrap();
        assert_abs_diff_eq!(out.summary.cmi, 0.070_710_678_118_654_75, epsilon = 1e-12);
        assert_eq!(out.summary.cmi_stderr, 0.0);
        assert!(out.curve.cmi_mean.windows(2).all(|w| w[0] <= w[1]));
        assert!(out.curve.li_dd.is_none());
    }

    #[test]
    fn search_prefers_steep_tests_on_separable_records() {
        // ΔY always points to the true branch
        let reps: Vec<RepetitionResult> = (0..6)
            .map(|rep| RepetitionResult {
                rep,
                branches: [
                    synthetic_branch(1, 50, 1.0, |t| 0.5 + t as f64),
                    synthetic_branch(2, 50, 1.0, |t| -0.5 - t as f64),
                ],
            })
            .collect();
        let opt = optimize_theta(&reps, &ThetaSearch::only(ThetaFamily::Erf), 10).unwrap();
        let half = optimize_theta(&reps, &ThetaSearch::only(ThetaFamily::ConstantHalf), 10).unwrap();
        assert!(opt.test_bound < half.test_bound);
        assert!(opt.theta.scale().unwrap() < 0.1);
        assert_eq!(opt.train_reps, vec![0, 2, 4]);
        assert_eq!(opt.test_reps, vec![1, 3, 5]);
        // constant-half on the held-out half is the plain θ = 1/2 bound there
        let test: Vec<&RepetitionResult> = reps.iter().filter(|r| r.rep % 2 == 1).collect();
        assert_abs_diff_eq!(
            half.test_bound,
            mean_bound(&test, &DecisionFunction::ConstantHalf, 10),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ties_go_to_the_smallest_scale() {
        let reps: Vec<RepetitionResult> = (0..4)
            .map(|rep| RepetitionResult {
                rep,
                branches: [synthetic_branch(1, 5, 0.0, |_| 0.3), synthetic_branch(2, 5, 0.0, |_| 0.3)],
            })
            .collect();
        let search = ThetaSearch::only(ThetaFamily::Erf);
        let opt = optimize_theta(&reps, &search, 3).unwrap();
        assert_eq!(opt.test_bound, 0.0);
        assert_eq!(opt.theta, DecisionFunction::Erf { a: search.a_min });
        assert!(optimize_theta(&reps[..3], &search, 3).is_err());
    }

    #[test]
    fn csv_schema_and_determinism() {
        let c = small_config();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        a.curve.write_csv(&pa).unwrap();
        b.curve.write_csv(&pb).unwrap();
        let (ta, tb) = (std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        assert_eq!(ta, tb);
        let text = String::from_utf8(ta).unwrap();
        assert!(text.starts_with(&CURVE_COLUMNS.join(",")));
        assert_eq!(text.lines().count(), 31);
        let mut off = c.clone();
        off.baselines = BaselineConfig::none();
        off.theta_search = None;
        let out = run_experiment(&off).unwrap();
        out.curve.write_csv(&pa).unwrap();
        let row = std::fs::read_to_string(&pa).unwrap().lines().nth(1).unwrap().to_string();
        assert_eq!(row.split(',').nth(4), Some(""));
    }
}
