//! Consensus-based sampling (CBS): interacting-particle methods for sampling
//! from and minimizing over `exp(-f)`.
//!
//! - [`moments`]: particle ensembles, Gibbs log-weights and weighted moments.
//! - [`beta`]: inverse temperature from an effective-sample-size target.
//! - [`engine`]: the CBS update and the run loop.
//! - [`gaussian`]: exact moment dynamics for Gaussian targets.
//! - [`objectives`]: built-in objectives and the name registry.
//! - [`bench`]: repeated-run success rates and posterior-moment experiments.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod beta;
pub mod engine;
pub mod error;
pub mod gaussian;
pub mod moments;
pub mod objectives;

pub use beta::{effective_sample_size, solve_beta, EssSolveReport};
pub use engine::{cbs_step, run, run_with_observer, CbsConfig, Mode, RunResult, StopReason};
pub use error::{CbsError, Result};
pub use moments::{log_weights, sym_sqrt, weighted_moments, Ensemble, LogWeights, WeightedMoments};
pub use objectives::{objective_by_name, Objective};
