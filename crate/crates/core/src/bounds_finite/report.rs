use serde::{Deserialize, Serialize};

use super::exact::{
    exact_cmi_k, exact_ege, exact_iomi, individual_sample_bound, kl_prior_bound, map_membership_error,
    membership_joint, subset_cmi_bound, supersample_mi, SubsetBound,
};
use super::lambert::{fano_lower_bound, improved_constant_bound};
use super::problem::{FiniteLearningProblem, SuperSampleSpec};
use crate::error::{Error, Result};
use crate::info_core::averaged_subset_entropy;

/// Slack allowed on every inequality and identity in a report.
pub const VALIDITY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantCheck {
    pub name: String,
    pub holds: bool,
    /// The side that should be smaller (or, for identities, the left side).
    pub lhs: f64,
    pub rhs: f64,
}

/// Every exact quantity and bound of one finite problem at one supersample
/// width `k`. Bounds that only make sense for width 2 (subset, individual
/// sample, hypothesis-test prior) are computed at `k = 2` regardless.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactBoundReport {
    pub n: usize,
    pub k: usize,
    pub ege: f64,
    pub iomi: f64,
    pub cmi_k: f64,
    pub cmi_2: f64,
    pub supersample_mi: f64,
    /// `√(IOMI / (2n))`.
    pub iomi_bound: f64,
    /// `√(2·CMI^k / n)`.
    pub cmi_bound: f64,
    pub subset_bounds: Vec<SubsetBound>,
    pub individual_bound: f64,
    pub kl_prior_bound: f64,
    /// Lambert-W bound at width `k`; absent when `k = 2`.
    pub improved_constant_bound: Option<f64>,
    pub fano_lower: f64,
    pub map_error: f64,
    pub checks: Vec<InvariantCheck>,
}

impl ExactBoundReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn first_failure(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

fn le(name: impl Into<String>, lhs: f64, rhs: f64) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        holds: lhs <= rhs + VALIDITY_TOL,
        lhs,
        rhs,
    }
}

fn eq(name: impl Into<String>, lhs: f64, rhs: f64) -> InvariantCheck {
    InvariantCheck {
        name: name.into(),
        holds: (lhs - rhs).abs() <= VALIDITY_TOL,
        lhs,
        rhs,
    }
}

/// Computes every quantity and records each invariant as a check without
/// failing on violations.
pub fn compute_report(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<ExactBoundReport> {
    if spec.n() != problem.n() {
        return Err(Error::validation(format!(
            "supersample has {} columns but the problem has n = {}",
            spec.n(),
            problem.n()
        )));
    }
    let n = problem.n();
    let nf = n as f64;
    let k = spec.k();
    let spec2 = SuperSampleSpec::new(2, n)?;

    let ege = exact_ege(problem)?;
    let iomi = exact_iomi(problem)?;
    let cmi_k = exact_cmi_k(problem, spec)?;
    let cmi_2 = if k == 2 { cmi_k } else { exact_cmi_k(problem, &spec2)? };
    let ss = supersample_mi(problem, spec)?;
    let subset_bounds = (1..=n).map(|m| subset_cmi_bound(problem, m)).collect::<Result<Vec<_>>>()?;
    let individual = individual_sample_bound(problem)?;
    let kl_prior = kl_prior_bound(problem)?;
    let improved = if k > 2 {
        Some(improved_constant_bound(cmi_k.max(0.0), n, k)?)
    } else {
        None
    };
    let fano = fano_lower_bound(cmi_k.max(0.0), n, k)?;
    let map_error = map_membership_error(problem, spec)?;
    let iomi_bound = (iomi.max(0.0) / (2.0 * nf)).sqrt();
    let cmi_bound = (2.0 * cmi_k.max(0.0) / nf).sqrt();

    let mut checks = vec![
        eq("iomi-decomposition", iomi, ss + cmi_k),
        le("cmi-at-most-iomi", cmi_k, iomi),
        le("ege-within-iomi-bound", ege, iomi_bound),
        le("ege-within-cmi-bound", ege, cmi_bound),
    ];
    for b in &subset_bounds {
        checks.push(le(format!("ege-within-subset-bound-m{}", b.m), ege, b.bound));
        checks.push(le(format!("subset-bound-within-jensen-form-m{}", b.m), b.bound, b.jensen_bound));
    }
    for pair in subset_bounds.windows(2) {
        checks.push(le(
            format!("subset-rate-monotone-m{}-m{}", pair[0].m, pair[1].m),
            pair[0].rate,
            pair[1].rate,
        ));
    }
    checks.push(le("ege-within-individual-bound", ege, individual));
    checks.push(le(
        "individual-within-cmi-bound",
        individual,
        (2.0 * cmi_2.max(0.0) / nf).sqrt(),
    ));
    checks.push(le("ege-within-kl-prior-bound", ege, kl_prior));
    if let Some(b) = improved {
        checks.push(le("ege-within-improved-constant-bound", ege, b));
    }
    checks.push(le("fano-below-map-error", fano, map_error));

    let joint = membership_joint(problem)?;
    let han = (1..=n)
        .map(|size| averaged_subset_entropy(&joint, size))
        .collect::<Result<Vec<_>>>()?;
    for (size, pair) in han.windows(2).enumerate() {
        checks.push(le(format!("han-monotone-k{}-k{}", size + 2, size + 1), pair[1], pair[0]));
    }

    Ok(ExactBoundReport {
        n,
        k,
        ege,
        iomi,
        cmi_k,
        cmi_2,
        supersample_mi: ss,
        iomi_bound,
        cmi_bound,
        subset_bounds,
        individual_bound: individual,
        kl_prior_bound: kl_prior,
        improved_constant_bound: improved,
        fano_lower: fano,
        map_error,
        checks,
    })
}

/// Like [`compute_report`] but fails on the first violated invariant.
pub fn exact_report(problem: &FiniteLearningProblem, spec: &SuperSampleSpec) -> Result<ExactBoundReport> {
    let report = compute_report(problem, spec)?;
    if let Some(bad) = report.first_failure() {
        return Err(Error::invariant(
            bad.name.clone(),
            format!("{} vs {} (tolerance {VALIDITY_TOL:e})", bad.lhs, bad.rhs),
        ));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info_core::FinitePmf;
    use crate::seeding::{derive_seed, stream_rng, SeedDomain};
    use approx::assert_abs_diff_eq;

    #[test]
    fn identity_report() {
        let p = FiniteLearningProblem::identity_bernoulli();
        let r = exact_report(&p, &SuperSampleSpec::new(2, 1).unwrap()).unwrap();
        assert_abs_diff_eq!(r.ege, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r.cmi_bound, 0.832_554_611_157_697_7, epsilon = 1e-12);
        assert_abs_diff_eq!(r.fano_lower, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(r.map_error, 0.25, epsilon = 1e-15);
        assert!(r.improved_constant_bound.is_none());
        let r3 = exact_report(&p, &SuperSampleSpec::new(3, 1).unwrap()).unwrap();
        assert!(r3.improved_constant_bound.unwrap() >= 0.5);
    }

    #[test]
    fn constant_report_is_all_zero() {
        let p = FiniteLearningProblem::constant(
            FinitePmf::new(vec![0.5, 0.2, 0.3]).unwrap(),
            2,
            vec![vec![0.3, 0.2, 0.9], vec![0.0, 1.0, 0.5]],
            FinitePmf::new(vec![0.4, 0.6]).unwrap(),
        )
        .unwrap();
        let r = exact_report(&p, &SuperSampleSpec::new(3, 2).unwrap()).unwrap();
        for v in [r.ege, r.iomi, r.cmi_k, r.iomi_bound, r.cmi_bound, r.kl_prior_bound] {
            assert!(v.abs() < 1e-7, "{v}");
        }
        assert_eq!(r.improved_constant_bound, Some(0.0));
    }

    #[test]
    fn random_problems_satisfy_every_check() {
        for i in 0..50 {
            let mut rng = stream_rng(derive_seed(0, SeedDomain::Problem, i), 0);
            let p = FiniteLearningProblem::random(&mut rng, 1 + (i as usize % 2), 2, 2).unwrap();
            let r = compute_report(&p, &SuperSampleSpec::new(2, p.n()).unwrap()).unwrap();
            assert!(r.all_hold(), "problem {i}: {:?}", r.first_failure());
        }
    }

    #[test]
    fn report_serializes() {
        let p = FiniteLearningProblem::identity_bernoulli();
        let r = compute_report(&p, &SuperSampleSpec::new(2, 1).unwrap()).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"cmi_2\""));
    }
}
