//! Exact bounds on finite learning problems.
//!
//! A [`FiniteLearningProblem`] fixes a data pmf on a finite alphabet, a
//! sample size `n`, a bounded loss table and a stochastic algorithm kernel
//! from samples to a finite hypothesis set. Everything here is computed by
//! brute-force enumeration over samples, supersamples and membership index
//! vectors, guarded by [`ENUMERATION_LIMIT`].

mod exact;
mod lambert;
mod problem;
mod report;

pub use exact::{
    cmi_limit_scan, exact_cmi_k, exact_ege, exact_iomi, individual_sample_bound, kl_prior_bound,
    map_membership_error, membership_joint, monotonicity_check, subset_cmi_bound, supersample_mi,
    verify_decomposition, SubsetBound,
};
pub use lambert::{
    fano_lower_bound, improved_constant_bound, improved_constant_bound_limit, improved_constant_coefficient,
    improved_constant_objective, lambert_w0,
};
pub use problem::{zero_one_loss, FiniteLearningProblem, SuperSampleSpec};
pub use report::{compute_report, exact_report, ExactBoundReport, InvariantCheck, VALIDITY_TOL};

/// Largest number of elementary terms an exact computation may enumerate.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;
