//! Full-batch Langevin dynamics on a width-2 supersample.
//!
//! `W_{t+1} = W_t − η_t ∇L̃_S(W_t) + √(2η_t/β_t)·ε_t` with `ε_t` drawn from
//! stream `t` of the branch noise seed, so any single step can be replayed.
//! Runs report each step to an observer together with the gradient
//! aggregates the hypothesis-test prior and the baselines need.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_zoo::{DataPoint, Model, ParameterVector, Sampler};
use crate::seeding::stream_rng;

/// Learning rates `η_t` and inverse temperatures `β_t` for `t = 0..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LDSchedule {
    Constant { steps: usize, eta: f64, beta: f64 },
    Explicit { eta: Vec<f64>, beta: Vec<f64> },
    /// `η_t = eta / (1 + decay·t)` with constant `β`.
    Decay { steps: usize, eta: f64, decay: f64, beta: f64 },
}

impl LDSchedule {
    pub fn constant(steps: usize, eta: f64, beta: f64) -> Result<Self> {
        let s = LDSchedule::Constant { steps, eta, beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let ok = match self {
            LDSchedule::Constant { eta, beta, .. } => positive(*eta) && positive(*beta),
            LDSchedule::Explicit { eta, beta } => {
                if eta.len() != beta.len() {
                    return Err(Error::DimensionMismatch {
                        expected: eta.len(),
                        got: beta.len(),
                    });
                }
                eta.iter().chain(beta).all(|&x| positive(x))
            }
            LDSchedule::Decay { eta, decay, beta, .. } => {
                positive(*eta) && positive(*beta) && decay.is_finite() && *decay >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::validation("learning rates and inverse temperatures must be positive and finite"))
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            LDSchedule::Constant { steps, .. } | LDSchedule::Decay { steps, .. } => *steps,
            LDSchedule::Explicit { eta, .. } => eta.len(),
        }
    }

    pub fn eta(&self, t: usize) -> f64 {
        match self {
            LDSchedule::Constant { eta, .. } => *eta,
            LDSchedule::Explicit { eta, .. } => eta[t],
            LDSchedule::Decay { eta, decay, .. } => eta / (1.0 + decay * t as f64),
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        match self {
            LDSchedule::Constant { beta, .. } | LDSchedule::Decay { beta, .. } => *beta,
            LDSchedule::Explicit { beta, .. } => beta[t],
        }
    }

    /// `Σ_{t<upto} β_t η_t`.
    pub fn beta_eta_sum(&self, upto: usize) -> f64 {
        (0..upto.min(self.steps())).map(|t| self.beta(t) * self.eta(t)).sum()
    }

    /// Same schedule cut to its first `steps` iterations.
    pub fn truncated(&self, steps: usize) -> LDSchedule {
        let steps = steps.min(self.steps());
        match self {
            LDSchedule::Constant { eta, beta, .. } => LDSchedule::Constant {
                steps,
                eta: *eta,
                beta: *beta,
            },
            LDSchedule::Explicit { eta, beta } => LDSchedule::Explicit {
                eta: eta[..steps].to_vec(),
                beta: beta[..steps].to_vec(),
            },
            LDSchedule::Decay { eta, decay, beta, .. } => LDSchedule::Decay {
                steps,
                eta: *eta,
                decay: *decay,
                beta: *beta,
            },
        }
    }
}

fn check_rates(eta: f64, beta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0 && beta > 0.0 && !beta.is_nan()) {
        return Err(Error::validation(format!("need eta > 0 and beta > 0, got {eta}, {beta}")));
    }
    Ok(())
}

/// `w − η·grad + √(2η/β)·noise`.
pub fn ld_update(w: &[f64], grad: &[f64], eta: f64, beta: f64, noise: &[f64]) -> Result<ParameterVector> {
    check_rates(eta, beta)?;
    if grad.len() != w.len() || noise.len() != w.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: if grad.len() != w.len() { grad.len() } else { noise.len() },
        });
    }
    let sigma = (2.0 * eta / beta).sqrt();
    Ok(ParameterVector::from_vec_unchecked(
        w.iter()
            .zip(grad)
            .zip(noise)
            .map(|((w, g), e)| w - eta * g + sigma * e)
            .collect(),
    ))
}

/// One Langevin step on the mean surrogate loss of `training_set`.
pub fn ld_step(
    model: &Model,
    w: &[f64],
    training_set: &[DataPoint],
    eta: f64,
    beta: f64,
    noise: &[f64],
) -> Result<ParameterVector> {
    if training_set.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    let mut grad = vec![0.0; model.dim()];
    let scale = 1.0 / training_set.len() as f64;
    for z in training_set {
        model.accumulate_grad(w, z, scale, &mut grad)?;
    }
    ld_update(w, &grad, eta, beta, noise)
}

/// Standard-normal noise `ε_t` for step `t` of the run keyed by `seed`.
pub fn step_noise(seed: u64, t: usize, dim: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, t as u64);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

/// `Z̃^(2)` with membership indices `U ∈ {1,2}^n` and held-out column `J`
/// (0-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperSamplePair {
    pub rows: [Vec<DataPoint>; 2],
    pub u: Vec<u8>,
    pub j: usize,
}

impl SuperSamplePair {
    pub fn new(rows: [Vec<DataPoint>; 2], u: Vec<u8>, j: usize) -> Result<Self> {
        let n = rows[0].len();
        if n == 0 || rows[1].len() != n || u.len() != n {
            return Err(Error::validation("supersample rows and index vector must share a positive length"));
        }
        if u.iter().any(|&x| x != 1 && x != 2) {
            return Err(Error::validation("membership indices take values in {1, 2}"));
        }
        if j >= n {
            return Err(Error::validation(format!("held-out column {j} outside 0..{n}")));
        }
        Ok(Self { rows, u, j })
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    /// `S = (Z̃_{U_i, i})_i`.
    pub fn training_set(&self) -> Vec<DataPoint> {
        (0..self.n()).map(|i| self.rows[self.u[i] as usize - 1][i].clone()).collect()
    }

    /// Training set with column `J` set to row `u_j`; the other columns follow `U`.
    pub fn branch_training_set(&self, u_j: u8) -> Result<Vec<DataPoint>> {
        if u_j != 1 && u_j != 2 {
            return Err(Error::validation("branch value must be 1 or 2"));
        }
        let mut s = self.training_set();
        s[self.j] = self.rows[u_j as usize - 1][self.j].clone();
        Ok(s)
    }

    /// `(Z̃_{1,J}, Z̃_{2,J})`.
    pub fn candidates(&self) -> [&DataPoint; 2] {
        [&self.rows[0][self.j], &self.rows[1][self.j]]
    }

    /// `S_{J^c}`: the training points outside column `J`.
    pub fn leave_one_out(&self) -> Vec<DataPoint> {
        (0..self.n())
            .filter(|&i| i != self.j)
            .map(|i| self.rows[self.u[i] as usize - 1][i].clone())
            .collect()
    }
}

/// Draws `2n` IID points, `U` uniform on `{1,2}^n` and `J` uniform on
/// `0..n`, all independent.
pub fn sample_supersample(source: &Sampler, n: usize, seed: u64) -> Result<SuperSamplePair> {
    Ok(sample_supersample_with_eval(source, n, 0, seed)?.0)
}

/// [`sample_supersample`] plus `eval` further points from the same draw, so
/// file-backed sources never reuse a record.
pub fn sample_supersample_with_eval(
    source: &Sampler,
    n: usize,
    eval: usize,
    seed: u64,
) -> Result<(SuperSamplePair, Vec<DataPoint>)> {
    if n == 0 {
        return Err(Error::validation("supersample needs at least one column"));
    }
    let mut points = source.draw(2 * n + eval, seed, 0)?;
    let held_out = points.split_off(2 * n);
    let second = points.split_off(n);
    let mut rng = stream_rng(seed, 1);
    let u = (0..n).map(|_| if rng.random::<bool>() { 1 } else { 2 }).collect();
    let j = rng.random_range(0..n);
    Ok((SuperSamplePair::new([points, second], u, j)?, held_out))
}

/// Everything known at step `t`, just after `W_{t+1}` is formed.
#[derive(Debug)]
pub struct StepView<'a> {
    pub t: usize,
    pub w_t: &'a [f64],
    pub w_next: &'a [f64],
    pub noise: &'a [f64],
    pub eta: f64,
    pub beta: f64,
    /// `∇ℓ̃(Z̃_{1,J}, W_t)` and `∇ℓ̃(Z̃_{2,J}, W_t)`.
    pub cand: [&'a [f64]; 2],
    /// `∇L̃_{S_{J^c}}(W_t)`, the mean over the `n − 1` other training points.
    pub loo: &'a [f64],
    /// `‖∇ℓ̃(Z_J, W_t) − ∇L̃_{S_{J^c}}(W_t)‖²` for this branch's `Z_J`.
    pub incoherence: f64,
    /// Mean of `‖∇ℓ̃(Z_i, W_t)‖²` over the branch's training set.
    pub mean_sq_grad_norm: f64,
    /// Largest `‖∇ℓ̃(z, W_t)‖` over the training points and both candidates.
    pub max_grad_norm: f64,
}

/// Runs LD on branch `u_j` of `pair` from `init`, calling `observer` after
/// every step, and returns `W_T`.
pub fn run_ld_observed<F>(
    model: &Model,
    pair: &SuperSamplePair,
    u_j: u8,
    schedule: &LDSchedule,
    init: &ParameterVector,
    noise_seed: u64,
    mut observer: F,
) -> Result<ParameterVector>
where
    F: FnMut(&StepView<'_>) -> Result<()>,
{
    schedule.validate()?;
    if u_j != 1 && u_j != 2 {
        return Err(Error::validation("branch value must be 1 or 2"));
    }
    let d = model.dim();
    if init.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: init.len(),
        });
    }
    let n = pair.n();
    let others: Vec<&DataPoint> = (0..n)
        .filter(|&i| i != pair.j)
        .map(|i| &pair.rows[pair.u[i] as usize - 1][i])
        .collect();
    let [c1, c2] = pair.candidates();
    let mut w = init.to_vec();
    let mut next = vec![0.0; d];
    let mut loo = vec![0.0; d];
    let mut g = vec![0.0; d];
    let mut cand = [vec![0.0; d], vec![0.0; d]];
    for t in 0..schedule.steps() {
        let (eta, beta) = (schedule.eta(t), schedule.beta(t));
        loo.iter_mut().for_each(|x| *x = 0.0);
        let mut sq_sum = 0.0;
        let mut max_sq = 0.0f64;
        for z in &others {
            g.iter_mut().for_each(|x| *x = 0.0);
            model.accumulate_grad(&w, z, 1.0, &mut g)?;
            let sq: f64 = g.iter().map(|x| x * x).sum();
            sq_sum += sq;
            max_sq = max_sq.max(sq);
            loo.iter_mut().zip(&g).for_each(|(l, x)| *l += x);
        }
        if n > 1 {
            let inv = 1.0 / (n - 1) as f64;
            loo.iter_mut().for_each(|x| *x *= inv);
        }
        for (c, z) in cand.iter_mut().zip([c1, c2]) {
            c.iter_mut().for_each(|x| *x = 0.0);
            model.accumulate_grad(&w, z, 1.0, c)?;
            max_sq = max_sq.max(c.iter().map(|x| x * x).sum());
        }
        let own = &cand[u_j as usize - 1];
        sq_sum += own.iter().map(|x| x * x).sum::<f64>();
        let incoherence: f64 = own.iter().zip(&loo).map(|(a, b)| (a - b) * (a - b)).sum();

        let noise = step_noise(noise_seed, t, d);
        let sigma = (2.0 * eta / beta).sqrt();
        let (wl, wc) = ((n - 1) as f64 / n as f64, 1.0 / n as f64);
        for i in 0..d {
            let grad = wl * loo[i] + wc * own[i];
            next[i] = w[i] - eta * grad + sigma * noise[i];
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("Langevin iterate diverged at step {t}")));
        }
        observer(&StepView {
            t,
            w_t: &w,
            w_next: &next,
            noise: &noise,
            eta,
            beta,
            cand: [&cand[0], &cand[1]],
            loo: &loo,
            incoherence,
            mean_sq_grad_norm: sq_sum / n as f64,
            max_grad_norm: max_sq.sqrt(),
        })?;
        std::mem::swap(&mut w, &mut next);
    }
    Ok(ParameterVector::from_vec_unchecked(w))
}

/// Recorded run: iterates, the noise that produced them and the cached
/// candidate and leave-one-out gradients at each `W_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub params: Vec<ParameterVector>,
    pub noise: Vec<ParameterVector>,
    pub cand_grads: Vec<[ParameterVector; 2]>,
    pub loo_grads: Vec<ParameterVector>,
    pub schedule: LDSchedule,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}

/// [`run_ld_observed`] with every step stored.
pub fn run_ld(
    model: &Model,
    pair: &SuperSamplePair,
    u_j: u8,
    schedule: &LDSchedule,
    init: &ParameterVector,
    seed: u64,
) -> Result<Trajectory> {
    let mut traj = Trajectory {
        params: vec![init.clone()],
        noise: vec![],
        cand_grads: vec![],
        loo_grads: vec![],
        schedule: schedule.clone(),
        seed,
    };
    let own = |v: &[f64]| ParameterVector::from_vec_unchecked(v.to_vec());
    run_ld_observed(model, pair, u_j, schedule, init, seed, |s| {
        traj.params.push(own(s.w_next));
        traj.noise.push(own(s.noise));
        traj.cand_grads.push([own(s.cand[0]), own(s.cand[1])]);
        traj.loo_grads.push(own(s.loo));
        Ok(())
    })?;
    Ok(traj)
}

/// One row of a trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: usize,
    pub surrogate_risk: f64,
    pub train01: f64,
    pub test01: f64,
    pub grad_norm: f64,
}

/// Risks at each `W_t` and the norm of the full-batch gradient there.
pub fn trajectory_summary(
    model: &Model,
    traj: &Trajectory,
    train: &[DataPoint],
    eval: &[DataPoint],
) -> Result<Vec<TrajectoryRow>> {
    traj.params
        .iter()
        .enumerate()
        .map(|(t, w)| {
            let (surrogate_risk, train01) = model.empirical_risks(w, train)?;
            let test01 = model.zero_one_risk(w, eval)?;
            let mut grad = vec![0.0; model.dim()];
            for z in train {
                model.accumulate_grad(w, z, 1.0 / train.len() as f64, &mut grad)?;
            }
            Ok(TrajectoryRow {
                t,
                surrogate_risk,
                train01,
                test01,
                grad_norm: grad.iter().map(|x| x * x).sum::<f64>().sqrt(),
            })
        })
        .collect()
}

pub fn write_trajectory_csv(rows: &[TrajectoryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::validation(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
