use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::{FiniteLearningProblem, SuperSampleSpec};
use super::ENUMERATION_LIMIT;
use crate::error::{Error, Result};
use crate::info_core::{channel_information, kl_of, mixture_of, FiniteJointPmf};

const CHUNK: usize = 512;

fn guard(terms: u128) -> Result<()> {
    if terms > ENUMERATION_LIMIT {
        Err(Error::Resource {
            terms,
            limit: ENUMERATION_LIMIT,
        })
    } else {
        Ok(())
    }
}

fn pow(base: usize, exp: usize) -> u128 {
    (base as u128).checked_pow(exp as u32).unwrap_or(u128::MAX)
}

fn supersample_terms(problem: &FiniteLearningProblem, k: usize) -> u128 {
    let n = problem.n();
    pow(problem.z_card(), k * n)
        .saturating_mul(pow(k, n))
        .saturating_mul(problem.w_card() as u128)
}

/// One realization of the `k × n` supersample with the output laws
/// `A(S_u)` for every membership vector `u ∈ [k]^n`.
struct SupersampleView<'a> {
    rows: Vec<&'a [f64]>,
}

/// Sums `prob(z̃) · f(z̃)` over all supersamples, slot by slot. Chunks are
/// reduced in index order so the result does not depend on scheduling.
fn supersample_pass<F>(problem: &FiniteLearningProblem, k: usize, slots: usize, f: F) -> Result<Vec<f64>>
where
    F: Fn(&SupersampleView<'_>, &mut [f64]) + Sync,
{
    guard(supersample_terms(problem, k))?;
    let n = problem.n();
    let z_card = problem.z_card();
    let cells = k * n;
    let total = z_card.pow(cells as u32);
    let memberships = k.pow(n as u32);
    let u_digits: Vec<Vec<usize>> = (0..memberships)
        .map(|u| super::problem::decode_digits(u, k, n))
        .collect();
    let chunks = total.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; slots];
            let mut out = vec![0.0; slots];
            let mut digits = vec![0usize; cells];
            for index in c * CHUNK..((c + 1) * CHUNK).min(total) {
                // cell r*n + i holds row r of column i
                let mut rest = index;
                for d in digits.iter_mut().rev() {
                    *d = rest % z_card;
                    rest /= z_card;
                }
                let prob: f64 = digits.iter().map(|&z| problem.data_pmf().prob(z)).product();
                if prob == 0.0 {
                    continue;
                }
                let rows = u_digits
                    .iter()
                    .map(|u| {
                        let sample = u
                            .iter()
                            .enumerate()
                            .fold(0, |s, (i, &r)| s * z_card + digits[r * n + i]);
                        problem.output_law(sample)
                    })
                    .collect();
                out.iter_mut().for_each(|o| *o = 0.0);
                f(&SupersampleView { rows }, &mut out);
                acc.iter_mut().zip(&out).for_each(|(a, o)| *a += prob * o);
            }
            acc
        })
        .collect();
    let mut total_acc = vec![0.0; slots];
    for p in partials {
        total_acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
    }
    Ok(total_acc)
}

fn check_spec(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<()> {
    if spec.n() != problem.n() {
        return Err(Error::validation(format!(
            "supersample has {} columns but the problem has n = {}",
            spec.n(),
            problem.n()
        )));
    }
    Ok(())
}

/// Law of `W` under `S ~ D^{⊗n}`.
fn output_marginal(problem: &FiniteLearningProblem) -> (Vec<f64>, Vec<f64>) {
    let weights: Vec<f64> = (0..problem.sample_count()).map(|s| problem.sample_prob(s)).collect();
    let rows: Vec<&[f64]> = (0..problem.sample_count()).map(|s| problem.output_law(s)).collect();
    let marginal = mixture_of(&weights, &rows);
    (weights, marginal)
}

/// `E[R_D(W) − R_S(W)]` by enumeration over samples and hypotheses.
pub fn exact_ege(problem: &FiniteLearningProblem) -> Result<f64> {
    guard(pow(problem.z_card(), problem.n()).saturating_mul(problem.w_card() as u128))?;
    let risks: Vec<f64> = (0..problem.w_card()).map(|w| problem.population_risk(w)).collect();
    let mut gap = 0.0;
    for s in 0..problem.sample_count() {
        let p = problem.sample_prob(s);
        if p == 0.0 {
            continue;
        }
        let digits = problem.sample_digits(s);
        for (w, &q) in problem.output_law(s).iter().enumerate() {
            if q > 0.0 {
                gap += p * q * (risks[w] - problem.empirical_risk(w, &digits));
            }
        }
    }
    Ok(gap)
}

/// Input–output mutual information `I(W; S)`.
pub fn exact_iomi(problem: &FiniteLearningProblem) -> Result<f64> {
    guard(pow(problem.z_card(), problem.n()).saturating_mul(problem.w_card() as u128))?;
    let (weights, _) = output_marginal(problem);
    let rows: Vec<&[f64]> = (0..problem.sample_count()).map(|s| problem.output_law(s)).collect();
    Ok(channel_information(&weights, &rows))
}

/// `CMI^k = I(W; U^(k) | Z̃^(k))`.
pub fn exact_cmi_k(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<f64> {
    check_spec(problem, spec)?;
    let uniform = vec![1.0 / spec.k().pow(problem.n() as u32) as f64; spec.k().pow(problem.n() as u32)];
    let out = supersample_pass(problem, spec.k(), 1, |view, out| {
        out[0] = channel_information(&uniform, &view.rows);
    })?;
    Ok(out[0])
}

/// `I(W; Z̃^(k))`, the information the output carries about the
/// supersample as a whole.
pub fn supersample_mi(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<f64> {
    check_spec(problem, spec)?;
    let (_, marginal) = output_marginal(problem);
    let memberships = spec.k().pow(problem.n() as u32);
    let uniform = vec![1.0 / memberships as f64; memberships];
    let out = supersample_pass(problem, spec.k(), 1, |view, out| {
        out[0] = kl_of(&mixture_of(&uniform, &view.rows), &marginal);
    })?;
    Ok(out[0])
}

/// Returns `(I(W;S), CMI^k, I(W;Z̃^(k)))` and checks
/// `I(W;S) = I(W;Z̃^(k)) + CMI^k` to `1e-10`.
pub fn verify_decomposition(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<(f64, f64, f64)> {
    let iomi = exact_iomi(problem)?;
    let cmi = exact_cmi_k(problem, spec)?;
    let ss = supersample_mi(problem, spec)?;
    let gap = (iomi - ss - cmi).abs();
    if gap > 1e-10 {
        return Err(Error::invariant(
            "iomi-decomposition",
            format!("I(W;S) = {iomi} but I(W;Z̃) + CMI = {ss} + {cmi} (gap {gap:e})"),
        ));
    }
    Ok((iomi, cmi, ss))
}

/// `CMI^k` for each width in `k_list`.
pub fn cmi_limit_scan(problem: &FiniteLearningProblem, k_list: &[usize]) -> Result<Vec<(usize, f64)>> {
    k_list
        .iter()
        .map(|&k| {
            let spec = SuperSampleSpec::for_problem(problem, k)?;
            Ok((k, exact_cmi_k(problem, &spec)?))
        })
        .collect()
}

/// For each subset `K` of the columns, the group id of every membership
/// vector `u ∈ {0,1}^n` under `u ↦ u_K`.
fn subset_keys(n: usize, m: usize) -> Vec<Vec<usize>> {
    (0..n)
        .combinations(m)
        .map(|subset| {
            (0..1usize << n)
                .map(|u| {
                    subset
                        .iter()
                        .fold(0, |key, &col| (key << 1) | ((u >> (n - 1 - col)) & 1))
                })
                .collect()
        })
        .collect()
}

/// `I^{z̃}(W; U_K)`: the membership pattern on `K` is uniform, and `W` given
/// that pattern is the average of the output laws over the other columns.
fn subset_information(rows: &[&[f64]], keys: &[usize], m: usize, grouped: &mut [Vec<f64>]) -> f64 {
    let groups = 1usize << m;
    let per_group = (rows.len() / groups) as f64;
    for g in grouped.iter_mut() {
        g.iter_mut().for_each(|x| *x = 0.0);
    }
    for (row, &key) in rows.iter().zip(keys) {
        for (acc, &p) in grouped[key].iter_mut().zip(row.iter()) {
            *acc += p / per_group;
        }
    }
    let refs: Vec<&[f64]> = grouped.iter().map(Vec::as_slice).collect();
    channel_information(&vec![1.0 / groups as f64; groups], &refs)
}

/// Random-subset bound with `|J| = m` (supersample width 2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetBound {
    pub m: usize,
    /// `I(W; U_J | Z̃, J) / m`.
    pub rate: f64,
    /// `E_{Z̃} √(2 I^{Z̃}(W; U_J | J) / m)`, expectation outside the root.
    pub bound: f64,
    /// `√(2 I(W; U_J | Z̃, J) / m)`, the Jensen-weakened form.
    pub jensen_bound: f64,
}

pub fn subset_cmi_bound(problem: &FiniteLearningProblem, m: usize) -> Result<SubsetBound> {
    let n = problem.n();
    if m == 0 || m > n {
        return Err(Error::validation(format!("subset size m = {m} outside 1..={n}")));
    }
    let keys = subset_keys(n, m);
    let w_card = problem.w_card();
    let out = supersample_pass(problem, 2, 2, |view, out| {
        let mut grouped = vec![vec![0.0; w_card]; 1 << m];
        let info = keys
            .iter()
            .map(|k| subset_information(&view.rows, k, m, &mut grouped))
            .sum::<f64>()
            / keys.len() as f64;
        out[0] = info;
        out[1] = (2.0 * info.max(0.0) / m as f64).sqrt();
    })?;
    let rate = out[0] / m as f64;
    Ok(SubsetBound {
        m,
        rate,
        bound: out[1],
        jensen_bound: (2.0 * rate.max(0.0)).sqrt(),
    })
}

/// Whether the subset rate at `m1` is at most the rate at `m2` (to `1e-10`).
pub fn monotonicity_check(problem: &FiniteLearningProblem, m1: usize, m2: usize) -> Result<bool> {
    if !(1 <= m1 && m1 < m2 && m2 <= problem.n()) {
        return Err(Error::validation(format!(
            "need 1 <= m1 < m2 <= n, got m1 = {m1}, m2 = {m2}, n = {}",
            problem.n()
        )));
    }
    let r1 = subset_cmi_bound(problem, m1)?.rate;
    let r2 = subset_cmi_bound(problem, m2)?.rate;
    Ok(r1 <= r2 + 1e-10)
}

/// `(1/n) Σ_i E_{Z̃} √(2 I^{Z̃}(W; U_i))` (supersample width 2).
pub fn individual_sample_bound(problem: &FiniteLearningProblem) -> Result<f64> {
    let n = problem.n();
    let keys = subset_keys(n, 1);
    let w_card = problem.w_card();
    let out = supersample_pass(problem, 2, 1, |view, out| {
        let mut grouped = vec![vec![0.0; w_card]; 2];
        out[0] = keys
            .iter()
            .map(|k| (2.0 * subset_information(&view.rows, k, 1, &mut grouped).max(0.0)).sqrt())
            .sum::<f64>()
            / n as f64;
    })?;
    Ok(out[0])
}

/// Error of the Bayes-optimal membership decoder: the smallest
/// `Pr[Ψ(W, Z̃) ≠ U]` over all estimators `Ψ`.
pub fn map_membership_error(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<f64> {
    check_spec(problem, spec)?;
    let memberships = spec.k().pow(problem.n() as u32) as f64;
    let w_card = problem.w_card();
    let out = supersample_pass(problem, spec.k(), 1, |view, out| {
        let hit: f64 = (0..w_card)
            .map(|w| view.rows.iter().map(|r| r[w]).fold(0.0, f64::max))
            .sum();
        out[0] = 1.0 - hit / memberships;
    })?;
    Ok(out[0])
}

/// Expectation of `√(2 KL(Q ‖ P))` over `(Z̃, U, J)` for the prior that
/// mixes the posterior over the unknown `U_J`:
/// `P = ½ A(S_{U_J=1}) + ½ A(S_{U_J=2})` given `(Z̃, U_{J^c}, J)`.
pub fn kl_prior_bound(problem: &FiniteLearningProblem) -> Result<f64> {
    let n = problem.n();
    let out = supersample_pass(problem, 2, 1, |view, out| {
        let mut acc = 0.0;
        let mut prior = vec![0.0; problem.w_card()];
        for (u, q) in view.rows.iter().enumerate() {
            for j in 0..n {
                let bit = 1 << (n - 1 - j);
                let (a, b) = (view.rows[u & !bit], view.rows[u | bit]);
                for ((p, x), y) in prior.iter_mut().zip(a.iter()).zip(b.iter()) {
                    *p = 0.5 * (x + y);
                }
                acc += (2.0 * kl_of(q, &prior).max(0.0)).sqrt();
            }
        }
        out[0] = acc / (view.rows.len() * n) as f64;
    })?;
    Ok(out[0])
}

/// Joint law of `(U_1, …, U_n, Y)` with `Y = (Z̃^(2), W)` flattened into a
/// single last axis, for subset-entropy checks.
pub fn membership_joint(problem: &FiniteLearningProblem) -> Result<FiniteJointPmf> {
    guard(supersample_terms(problem, 2))?;
    let n = problem.n();
    let z_card = problem.z_card();
    let w_card = problem.w_card();
    let supersamples = z_card.pow(2 * n as u32);
    let y_card = supersamples * w_card;
    let memberships = 1usize << n;
    let mut probs = vec![0.0; memberships * y_card];
    for zt in 0..supersamples {
        let digits = super::problem::decode_digits(zt, z_card, 2 * n);
        let p: f64 = digits.iter().map(|&z| problem.data_pmf().prob(z)).product();
        for u in 0..memberships {
            let sample = (0..n).fold(0, |s, i| s * z_card + digits[((u >> (n - 1 - i)) & 1) * n + i]);
            for (w, &q) in problem.output_law(sample).iter().enumerate() {
                probs[u * y_card + zt * w_card + w] = p * q / memberships as f64;
            }
        }
    }
    let mut dims = vec![2; n];
    dims.push(y_card);
    Ok(FiniteJointPmf::from_parts_unchecked(dims, probs))
}
