//! Early-stopped mirror descent for least-squares learning.
//!
//! The crate provides least-squares problems ([`problem`]), mirror maps and
//! Bregman divergences ([`mirror`]), discrete and continuous-time mirror
//! descent with data-dependent stopping rules ([`engine`]), offset Rademacher
//! complexities ([`offset`]) and explicitly regularized baselines
//! ([`baselines`]).

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod engine;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mirror;
pub mod offset;
pub mod problem;
pub mod rng;

pub use engine::{
    l1_hyperparameters, md_step, run_continuous, run_discrete, IterateRecord, RunOptions,
    StopReason, StopRule, StoppingReport, Trajectory,
};
pub use error::{Error, Result};
pub use mirror::{AnyMap, EuclideanMap, HypentropyMap, MapSpec, MirrorMap, QuadraticMap};
pub use problem::{GaussianLinearLaw, KernelProblem, RegressionProblem};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
