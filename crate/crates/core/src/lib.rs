//! Information-theoretic generalization bounds.
//!
//! Two halves share this crate:
//!
//! * exact computation on finite learning problems ([`info_core`],
//!   [`bounds_finite`]): entropy, KL, mutual and conditional mutual
//!   information by enumeration, and the input–output / supersample
//!   conditional mutual information bounds built on top of them;
//! * Monte Carlo estimation of the hypothesis-testing bound for full-batch
//!   Langevin dynamics on small differentiable models ([`model_zoo`],
//!   [`ld_engine`], [`ht_prior`], [`baselines`], [`mc_lab`]).
//!
//! All information quantities are in nats.

pub mod baselines;
pub mod bounds_finite;
pub mod error;
pub mod ht_prior;
pub mod info_core;
pub mod ld_engine;
pub mod mc_lab;
pub mod model_zoo;
pub mod seeding;

pub use error::{Error, Result};

pub use bounds_finite::{ExactBoundReport, FiniteLearningProblem, SuperSampleSpec};
pub use ht_prior::{BeliefVector, DecisionFunction, HypothesisTestState, StepKLRecord};
pub use info_core::{ConditionalTable, FiniteJointPmf, FinitePmf};
pub use ld_engine::{LDSchedule, SuperSamplePair, Trajectory};
pub use mc_lab::{BoundCurve, ExperimentConfig};
pub use model_zoo::{DataPoint, DataSource, Model, ParameterVector};

/// Natural-log to base-2 conversion factor for display.
pub const NATS_TO_BITS: f64 = std::f64::consts::LOG2_E;
