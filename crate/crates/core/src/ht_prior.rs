//! Hypothesis-testing prior for Langevin dynamics.
//!
//! The prior does not know which candidate `Z̃_{1,J}` or `Z̃_{2,J}` sits in
//! the training set. At each step it replaces that gradient with a
//! `θ(ΔY_t)`-weighted average of the two, where `ΔY_t = Y_{t,2} − Y_{t,1}`
//! is the log-likelihood ratio of the trajectory so far under the two
//! hypotheses. Both step laws are Gaussians with covariance `(2η/β)·I`, so
//! each step costs the closed-form KL `βη(1{U_J=1} − θ)²‖ζ‖²/(4n²)`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `ΔY` is clamped to this magnitude before `erf`/`tanh`.
pub const DELTA_Y_CLAMP: f64 = 1e8;

/// Map from the test statistic to the belief that `U_J = 1`.
///
/// The scaled kinds use `θ_a(x) = ½(1 + erf(x/a))` and
/// `θ_a(x) = ½(1 + tanh(x/a))`, so a small `a` makes a steep test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecisionFunction {
    ConstantHalf,
    Erf { a: f64 },
    Tanh { a: f64 },
    Sign,
}

impl DecisionFunction {
    pub fn validate(&self) -> Result<()> {
        match self {
            DecisionFunction::Erf { a } | DecisionFunction::Tanh { a } if !(a.is_finite() && *a > 0.0) => {
                Err(Error::validation(format!("decision scale must be positive, got {a}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            DecisionFunction::ConstantHalf => 0.5,
            DecisionFunction::Erf { a } => 0.5 * (1.0 + libm::erf(x.clamp(-DELTA_Y_CLAMP, DELTA_Y_CLAMP) / a)),
            DecisionFunction::Tanh { a } => 0.5 * (1.0 + (x.clamp(-DELTA_Y_CLAMP, DELTA_Y_CLAMP) / a).tanh()),
            DecisionFunction::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    0.0
                } else {
                    0.5
                }
            }
        }
    }

    /// The same kind with scale `a` (no-op for the unscaled kinds).
    pub fn with_scale(&self, a: f64) -> Self {
        match self {
            DecisionFunction::Erf { .. } => DecisionFunction::Erf { a },
            DecisionFunction::Tanh { .. } => DecisionFunction::Tanh { a },
            other => *other,
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match self {
            DecisionFunction::Erf { a } | DecisionFunction::Tanh { a } => Some(*a),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DecisionFunction::ConstantHalf => "constant-half",
            DecisionFunction::Erf { .. } => "erf",
            DecisionFunction::Tanh { .. } => "tanh",
            DecisionFunction::Sign => "sign",
        }
    }
}

impl fmt::Display for DecisionFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scale() {
            Some(a) => write!(f, "{}:{a}", self.name()),
            None => f.write_str(self.name()),
        }
    }
}

/// Parses `KIND[:a]`, e.g. `erf:0.5`, `tanh`, `sign`, `constant-half`.
/// A scaled kind without an explicit scale gets `a = 1`.
impl FromStr for DecisionFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, scale) = match s.split_once(':') {
            Some((k, a)) => (
                k,
                Some(
                    a.parse::<f64>()
                        .map_err(|_| Error::validation(format!("bad decision scale in {s:?}")))?,
                ),
            ),
            None => (s, None),
        };
        let theta = match (kind, scale) {
            ("constant-half" | "half", None) => DecisionFunction::ConstantHalf,
            ("sign", None) => DecisionFunction::Sign,
            ("erf", a) => DecisionFunction::Erf { a: a.unwrap_or(1.0) },
            ("tanh", a) => DecisionFunction::Tanh { a: a.unwrap_or(1.0) },
            _ => return Err(Error::validation(format!("unknown decision function {s:?}"))),
        };
        theta.validate()?;
        Ok(theta)
    }
}

/// Accumulated statistics `(Y_{t,1}, Y_{t,2})` after `t` increments.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HypothesisTestState {
    pub y1: f64,
    pub y2: f64,
    pub t: usize,
}

impl HypothesisTestState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `ΔY = Y_{t,2} − Y_{t,1}`.
    pub fn delta(&self) -> f64 {
        self.y2 - self.y1
    }
}

/// Both increments `(β/(4η))‖W_{t+1} − W_t + η(n−1)/n·∇L̃_{S_{J^c}} + (η/n)∇ℓ̃(Z̃_{u,J})‖²`.
#[allow(clippy::too_many_arguments)]
pub fn y_increments(
    w_prev: &[f64],
    w_next: &[f64],
    eta: f64,
    beta: f64,
    loo_grad: &[f64],
    cand_grad_1: &[f64],
    cand_grad_2: &[f64],
    n: usize,
) -> Result<(f64, f64)> {
    let d = w_prev.len();
    for len in [w_next.len(), loo_grad.len(), cand_grad_1.len(), cand_grad_2.len()] {
        if len != d {
            return Err(Error::DimensionMismatch { expected: d, got: len });
        }
    }
    if !(eta > 0.0 && beta > 0.0) || n == 0 {
        return Err(Error::validation("need eta > 0, beta > 0 and n >= 1"));
    }
    let wl = eta * (n - 1) as f64 / n as f64;
    let wc = eta / n as f64;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 0..d {
        let base = w_next[i] - w_prev[i] + wl * loo_grad[i];
        let r1 = base + wc * cand_grad_1[i];
        let r2 = base + wc * cand_grad_2[i];
        s1 += r1 * r1;
        s2 += r2 * r2;
    }
    let c = beta / (4.0 * eta);
    Ok((c * s1, c * s2))
}

#[allow(clippy::too_many_arguments)]
pub fn update_y(
    state: &HypothesisTestState,
    w_prev: &[f64],
    w_next: &[f64],
    eta: f64,
    beta: f64,
    loo_grad: &[f64],
    cand_grad_1: &[f64],
    cand_grad_2: &[f64],
    n: usize,
) -> Result<HypothesisTestState> {
    let (i1, i2) = y_increments(w_prev, w_next, eta, beta, loo_grad, cand_grad_1, cand_grad_2, n)?;
    Ok(HypothesisTestState {
        y1: state.y1 + i1,
        y2: state.y2 + i2,
        t: state.t + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefVector {
    pub pi1: f64,
    pub pi2: f64,
}

/// `π = (θ(ΔY), 1 − θ(ΔY))`.
pub fn belief(theta: &DecisionFunction, state: &HypothesisTestState) -> BeliefVector {
    let pi1 = theta.eval(state.delta());
    BeliefVector { pi1, pi2: 1.0 - pi1 }
}

/// Same-covariance Gaussian KL between the posterior and prior step laws:
/// `βη(indicator − θ)²‖ζ‖²/(4n²)`.
pub fn step_kl(eta: f64, beta: f64, n: usize, zeta: &[f64], indicator: u8, theta_val: f64) -> Result<f64> {
    let zeta_sq = zeta.iter().map(|x| x * x).sum();
    step_kl_from_norm(eta, beta, n, zeta_sq, indicator, theta_val)
}

pub fn step_kl_from_norm(eta: f64, beta: f64, n: usize, zeta_sq: f64, indicator: u8, theta_val: f64) -> Result<f64> {
    check_step(eta, beta, n, indicator, theta_val)?;
    let gap = indicator as f64 - theta_val;
    Ok(beta * eta * gap * gap * zeta_sq / (4.0 * (n * n) as f64))
}

fn check_step(eta: f64, beta: f64, n: usize, indicator: u8, theta_val: f64) -> Result<()> {
    if !(eta > 0.0 && beta > 0.0) || n == 0 {
        return Err(Error::validation("need eta > 0, beta > 0 and n >= 1"));
    }
    if indicator > 1 {
        return Err(Error::validation("indicator must be 0 or 1"));
    }
    if !(0.0..=1.0).contains(&theta_val) {
        return Err(Error::validation(format!("belief {theta_val} outside [0, 1]")));
    }
    Ok(())
}

/// One step of one branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepKLRecord {
    pub t: usize,
    pub eta: f64,
    pub beta: f64,
    pub zeta_sq: f64,
    pub delta_y: f64,
    pub theta_val: f64,
    pub indicator: u8,
    pub kl: f64,
    /// `β η ‖ζ‖² (indicator − θ)²`.
    pub summand: f64,
}

impl StepKLRecord {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: usize,
        eta: f64,
        beta: f64,
        n: usize,
        zeta_sq: f64,
        delta_y: f64,
        indicator: u8,
        theta: &DecisionFunction,
    ) -> Result<Self> {
        let theta_val = theta.eval(delta_y);
        check_step(eta, beta, n, indicator, theta_val)?;
        let gap = indicator as f64 - theta_val;
        let summand = beta * eta * zeta_sq * gap * gap;
        Ok(Self {
            t,
            eta,
            beta,
            zeta_sq,
            delta_y,
            theta_val,
            indicator,
            kl: summand / (4.0 * (n * n) as f64),
            summand,
        })
    }

    /// `(indicator − θ)²`, the squared error of the hypothesis test.
    pub fn test_err_sq(&self) -> f64 {
        let g = self.indicator as f64 - self.theta_val;
        g * g
    }
}

/// Records of one conditioning cell `(Z̃, U, J)`: one stream per
/// independent noise replicate, each covering the same steps.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CellRecords {
    pub replicates: Vec<Vec<StepKLRecord>>,
}

impl CellRecords {
    pub fn single(records: Vec<StepKLRecord>) -> Self {
        Self {
            replicates: vec![records],
        }
    }

    /// `√(Σ_t E[summand_t | cell])`, the inner expectation estimated by the
    /// replicate mean.
    pub fn root(&self) -> Result<f64> {
        let reps = self.replicates.len();
        if reps == 0 {
            return Err(Error::validation("cell has no replicates"));
        }
        let steps = self.replicates[0].len();
        if self.replicates.iter().any(|r| r.len() != steps) {
            return Err(Error::validation("replicates of a cell cover different horizons"));
        }
        let total: f64 = self.replicates.iter().flatten().map(|r| r.summand).sum();
        Ok((total / reps as f64).sqrt())
    }
}

/// `(1/(n√2))·E_cell √(Σ_t E[β η ‖ζ‖² (1{U_J=1} − θ)² | cell])`.
pub fn accumulate_bound(cells: &[CellRecords], n: usize) -> Result<f64> {
    if cells.is_empty() {
        return Err(Error::validation("no records to accumulate"));
    }
    if n == 0 {
        return Err(Error::validation("sample size must be at least 1"));
    }
    let mut total = 0.0;
    for c in cells {
        total += c.root()?;
    }
    Ok(total / cells.len() as f64 / (n as f64 * std::f64::consts::SQRT_2))
}

/// `(1/(2√2 n))·mean(V_1 + V_2)` over repetitions.
pub fn accumulate_v1_v2(v1: &[f64], v2: &[f64], n: usize) -> Result<f64> {
    if v1.is_empty() || v1.len() != v2.len() {
        return Err(Error::validation("V1 and V2 must be nonempty and aligned"));
    }
    let sum: f64 = v1.iter().zip(v2).map(|(a, b)| a + b).sum();
    Ok(sum / v1.len() as f64 / (2.0 * std::f64::consts::SQRT_2 * n as f64))
}

/// Weighted mean of `√(2·KL)` over cells.
pub fn kl_form_bound(per_cell_kls: &[f64], weights: &[f64]) -> Result<f64> {
    if per_cell_kls.is_empty() || per_cell_kls.len() != weights.len() {
        return Err(Error::validation("KL values and weights must be nonempty and aligned"));
    }
    if let Some(k) = per_cell_kls.iter().find(|k| !(**k >= 0.0)) {
        return Err(Error::Domain(format!("KL divergence must be nonnegative, got {k}")));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::validation("weights must be nonnegative"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::validation("weights sum to zero"));
    }
    Ok(per_cell_kls
        .iter()
        .zip(weights)
        .map(|(k, w)| w * (2.0 * k).sqrt())
        .sum::<f64>()
        / total)
}

/// Scalar Gaussian Markov step `W_t = a·W_{t−1} + b + N(0, var)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub a: f64,
    pub b: f64,
    pub var: f64,
}

/// `N(m, v)` on the real line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: f64,
    pub var: f64,
}

fn gaussian_kl(q: Gaussian, p: Gaussian) -> f64 {
    let d = q.mean - p.mean;
    0.5 * (q.var / p.var + d * d / p.var - 1.0 + (p.var / q.var).ln())
}

/// For two Markov chains started from the same law `init`, returns
/// `(KL(Q_T ‖ P_T), Σ_t E_Q KL(Q_{t|} ‖ P_{t|}))` and checks the first is at
/// most the second.
pub fn chain_rule_check(init: Gaussian, q_steps: &[GaussianStep], p_steps: &[GaussianStep]) -> Result<(f64, f64)> {
    if q_steps.len() != p_steps.len() {
        return Err(Error::DimensionMismatch {
            expected: q_steps.len(),
            got: p_steps.len(),
        });
    }
    if !(init.var > 0.0) {
        return Err(Error::validation("initial variance must be positive"));
    }
    let mut q = init;
    let mut p = init;
    let mut rhs = 0.0;
    for (qs, ps) in q_steps.iter().zip(p_steps) {
        if !(qs.var > 0.0) || (qs.var - ps.var).abs() > 1e-15 * qs.var.max(ps.var) {
            return Err(Error::validation("step laws must share a positive variance"));
        }
        // E_{w ~ Q_{t−1}} ((Δa·w + Δb)² / (2 var))
        let (da, db) = (qs.a - ps.a, qs.b - ps.b);
        let m = da * q.mean + db;
        rhs += (m * m + da * da * q.var) / (2.0 * qs.var);
        q = Gaussian {
            mean: qs.a * q.mean + qs.b,
            var: qs.a * qs.a * q.var + qs.var,
        };
        p = Gaussian {
            mean: ps.a * p.mean + ps.b,
            var: ps.a * ps.a * p.var + ps.var,
        };
    }
    let lhs = gaussian_kl(q, p);
    if lhs > rhs + 1e-10 {
        return Err(Error::invariant(
            "kl-chain-rule",
            format!("marginal KL {lhs} exceeds summed step KL {rhs}"),
        ));
    }
    Ok((lhs, rhs))
}

/// Writes `t, zeta_sq, delta_y, theta, test_err_sq, kl` per record.
pub fn write_step_records_csv(records: &[StepKLRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::validation(format!("{other:?}")),
    })?;
    w.write_record(["t", "zeta_sq", "delta_y", "theta", "test_err_sq", "kl"])?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.zeta_sq.to_string(),
            r.delta_y.to_string(),
            r.theta_val.to_string(),
            r.test_err_sq().to_string(),
            r.kl.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
