//! Comparison bounds for Langevin dynamics.
//!
//! The Lipschitz forms are the published closed forms. The data-dependent
//! forms replace the per-step Lipschitz penalty with an observed quantity
//! (training-set incoherence, or the mean squared per-sample gradient norm);
//! their constants are pinned so that substituting the worst case
//! (`4L²` and `L²` respectively) recovers the Lipschitz form exactly. Those
//! constants are an approximation by consistency, not a transcription.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ld_engine::LDSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    LiLipschitz,
    NegreaLipschitz,
    NegreaDataDependent,
    LiDataDependent,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::LiLipschitz,
        BaselineKind::NegreaLipschitz,
        BaselineKind::NegreaDataDependent,
        BaselineKind::LiDataDependent,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "li-lipschitz" | "li_lip" => Ok(BaselineKind::LiLipschitz),
            "negrea-lipschitz" | "negrea_lip" => Ok(BaselineKind::NegreaLipschitz),
            "negrea-data-dependent" | "negrea_dd" => Ok(BaselineKind::NegreaDataDependent),
            "li-data-dependent" | "li_dd" => Ok(BaselineKind::LiDataDependent),
            _ => Err(Error::validation(format!("unknown baseline {s:?}"))),
        }
    }
}

/// Lipschitz constant of the surrogate loss: fixed, or the largest
/// per-sample gradient norm observed along the trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzConstant {
    Fixed(f64),
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub lipschitz: LipschitzConstant,
    pub which: Vec<BaselineKind>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lipschitz: LipschitzConstant::Empirical,
            which: BaselineKind::ALL.to_vec(),
        }
    }
}

impl BaselineConfig {
    pub fn none() -> Self {
        Self {
            lipschitz: LipschitzConstant::Empirical,
            which: vec![],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let LipschitzConstant::Fixed(l) = self.lipschitz {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::validation(format!("Lipschitz constant must be positive, got {l}")));
            }
        }
        Ok(())
    }

    pub fn enabled(&self, kind: BaselineKind) -> bool {
        self.which.contains(&kind)
    }

    pub fn resolve_lipschitz(&self, empirical: f64) -> f64 {
        match self.lipschitz {
            LipschitzConstant::Fixed(l) => l,
            LipschitzConstant::Empirical => empirical,
        }
    }
}

/// `(√2·L/n)·√(Σ_t β_t η_t)` given the sum.
pub fn li_lipschitz_from_sum(beta_eta_sum: f64, lipschitz: f64, n: usize) -> f64 {
    SQRT_2 * lipschitz / n as f64 * beta_eta_sum.sqrt()
}

pub fn li_lipschitz_bound(schedule: &LDSchedule, lipschitz: f64, n: usize) -> f64 {
    li_lipschitz_from_sum(schedule.beta_eta_sum(schedule.steps()), lipschitz, n)
}

/// `(L/(2(n−1)))·√(Σ_t β_t η_t)` given the sum.
pub fn negrea_lipschitz_from_sum(beta_eta_sum: f64, lipschitz: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::validation("the leave-one-out bound needs n >= 2"));
    }
    Ok(lipschitz / (2.0 * (n - 1) as f64) * beta_eta_sum.sqrt())
}

pub fn negrea_lipschitz_bound(schedule: &LDSchedule, lipschitz: f64, n: usize) -> Result<f64> {
    negrea_lipschitz_from_sum(schedule.beta_eta_sum(schedule.steps()), lipschitz, n)
}

/// `‖∇ℓ̃(Z_j) − (1/(n−1)) Σ_{i≠j} ∇ℓ̃(Z_i)‖²`.
pub fn training_set_incoherence(grads: &[Vec<f64>], j: usize) -> Result<f64> {
    let n = grads.len();
    if n < 2 {
        return Err(Error::validation("incoherence needs at least two points"));
    }
    if j >= n {
        return Err(Error::validation(format!("index {j} outside 0..{n}")));
    }
    let d = grads[j].len();
    if let Some(g) = grads.iter().find(|g| g.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: g.len() });
    }
    let mut mean = vec![0.0; d];
    for (i, g) in grads.iter().enumerate() {
        if i != j {
            mean.iter_mut().zip(g).for_each(|(m, x)| *m += x / (n - 1) as f64);
        }
    }
    Ok(grads[j].iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Mean over runs of `c·√(Σ_{s<t} β_s η_s · q_s)` for every horizon
/// `t = 1..=T`, given per-step penalties `q_s`.
fn data_dependent_curve(per_run: &[Vec<f64>], schedule: &LDSchedule, c: f64) -> Result<Vec<f64>> {
    if per_run.is_empty() {
        return Err(Error::validation("no runs to average"));
    }
    let steps = per_run[0].len();
    if steps > schedule.steps() || per_run.iter().any(|r| r.len() != steps) {
        return Err(Error::validation("runs must share a horizon no longer than the schedule"));
    }
    let mut curve = vec![0.0; steps];
    for run in per_run {
        let mut s = 0.0;
        for (t, q) in run.iter().enumerate() {
            s += schedule.beta(t) * schedule.eta(t) * q;
            curve[t] += s.sqrt();
        }
    }
    let scale = c / per_run.len() as f64;
    curve.iter_mut().for_each(|v| *v *= scale);
    Ok(curve)
}

fn final_value(curve: Vec<f64>) -> f64 {
    curve.last().copied().unwrap_or(0.0)
}

/// [`negrea_data_dependent_bound`] at every horizon.
pub fn negrea_data_dependent_curve(incoherences: &[Vec<f64>], schedule: &LDSchedule, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::validation("the leave-one-out bound needs n >= 2"));
    }
    data_dependent_curve(incoherences, schedule, 1.0 / (4.0 * (n - 1) as f64))
}

/// [`li_data_dependent_bound`] at every horizon.
pub fn li_data_dependent_curve(mean_sq_grad_norms: &[Vec<f64>], schedule: &LDSchedule, n: usize) -> Result<Vec<f64>> {
    data_dependent_curve(mean_sq_grad_norms, schedule, SQRT_2 / n as f64)
}

/// `(1/(4(n−1)))·E√(Σ_t β_t η_t · incoherence_t)`; equals
/// [`negrea_lipschitz_bound`] when every incoherence is `4L²`.
pub fn negrea_data_dependent_bound(incoherences: &[Vec<f64>], schedule: &LDSchedule, n: usize) -> Result<f64> {
    negrea_data_dependent_curve(incoherences, schedule, n).map(final_value)
}

/// `(√2/n)·E√(Σ_t β_t η_t · g_t)` with `g_t` the mean squared per-sample
/// gradient norm; equals [`li_lipschitz_bound`] when every `g_t` is `L²`.
pub fn li_data_dependent_bound(mean_sq_grad_norms: &[Vec<f64>], schedule: &LDSchedule, n: usize) -> Result<f64> {
    li_data_dependent_curve(mean_sq_grad_norms, schedule, n).map(final_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lipschitz_examples() {
        let s = LDSchedule::constant(4, 0.25, 1.0).unwrap();
        assert_abs_diff_eq!(li_lipschitz_bound(&s, 1.0, 10), 0.141_421_356_237_309_5, epsilon = 1e-15);
        assert_abs_diff_eq!(negrea_lipschitz_bound(&s, 1.0, 11).unwrap(), 0.05, epsilon = 1e-15);
        let empty = LDSchedule::constant(0, 0.25, 1.0).unwrap();
        assert_eq!(li_lipschitz_bound(&empty, 1.0, 10), 0.0);
        assert_eq!(negrea_lipschitz_bound(&empty, 1.0, 10).unwrap(), 0.0);
        assert_abs_diff_eq!(li_lipschitz_bound(&s, 2.0, 10), 2.0 * li_lipschitz_bound(&s, 1.0, 10), epsilon = 1e-15);
        let n = 7;
        let ratio = negrea_lipschitz_bound(&s, 1.3, n).unwrap() / li_lipschitz_bound(&s, 1.3, n);
        assert_abs_diff_eq!(ratio, n as f64 / (2.0 * SQRT_2 * (n - 1) as f64), epsilon = 1e-15);
        assert!(negrea_lipschitz_bound(&s, 1.0, 1).is_err());
    }

    #[test]
    fn incoherence_examples() {
        assert_eq!(training_set_incoherence(&vec![vec![1.0, 2.0]; 3], 1).unwrap(), 0.0);
        let opposite = [vec![1.0, 0.0], vec![-1.0, 0.0]];
        assert_abs_diff_eq!(training_set_incoherence(&opposite, 0).unwrap(), 4.0, epsilon = 1e-15);
        let g = [vec![0.3, 1.0], vec![-0.2, 0.5], vec![1.1, -0.7], vec![0.0, 0.4]];
        let mut naive = 0.0;
        for k in 0..2 {
            let others: f64 = [0, 1, 3].iter().map(|&i| g[i][k]).sum::<f64>() / 3.0;
            naive += (g[2][k] - others).powi(2);
        }
        assert_abs_diff_eq!(training_set_incoherence(&g, 2).unwrap(), naive, epsilon = 1e-12);
        assert!(training_set_incoherence(&g[..1], 0).is_err());
    }

    #[test]
    fn data_dependent_consistency() {
        let s = LDSchedule::constant(30, 0.01, 500.0).unwrap();
        let (l, n) = (1.7, 12);
        let worst = vec![vec![4.0 * l * l; 30]; 3];
        assert_abs_diff_eq!(
            negrea_data_dependent_bound(&worst, &s, n).unwrap(),
            negrea_lipschitz_bound(&s, l, n).unwrap(),
            epsilon = 1e-12
        );
        let sq = vec![vec![l * l; 30]; 2];
        assert_abs_diff_eq!(
            li_data_dependent_bound(&sq, &s, n).unwrap(),
            li_lipschitz_bound(&s, l, n),
            epsilon = 1e-12
        );
        assert_eq!(negrea_data_dependent_bound(&[vec![0.0; 30]], &s, n).unwrap(), 0.0);
        let mut bumped = worst.clone();
        bumped[1][7] += 1.0;
        assert!(negrea_data_dependent_bound(&bumped, &s, n).unwrap() > negrea_data_dependent_bound(&worst, &s, n).unwrap());
        assert!(negrea_data_dependent_bound(&[], &s, n).is_err());
    }

    #[test]
    fn parse_kinds() {
        for k in BaselineKind::ALL {
            let text = serde_json::to_string(&k).unwrap();
            assert_eq!(BaselineKind::parse(text.trim_matches('"')).unwrap(), k);
        }
        assert!(BaselineKind::parse("pensia").is_err());
    }
}
