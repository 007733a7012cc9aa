//! The consensus-based particle iteration and its run loop.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beta::{solve_beta, DEFAULT_BETA_MAX, DEFAULT_ETA};
use crate::error::{CbsError, Result};
use crate::moments::{log_weights, sym_sqrt_with, weighted_moments, Ensemble, PSD_REL_TOL};
use crate::objectives::Objective;

pub const DEFAULT_COV_FROBENIUS_TOL: f64 = 1e-12;
pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Below this many particles objective evaluations stay on the calling thread.
const PARALLEL_EVAL_THRESHOLD: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `lambda = 1/(1 + beta)`: the Gaussian steady state is the target.
    Sampling,
    /// `lambda = 1`: the ensemble collapses onto the minimizer.
    Optimization,
}

impl Mode {
    pub fn lambda(self, beta: f64) -> f64 {
        match self {
            Mode::Sampling => 1.0 / (1.0 + beta),
            Mode::Optimization => 1.0,
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = CbsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sampling" | "sample" => Ok(Mode::Sampling),
            "optimization" | "optimize" => Ok(Mode::Optimization),
            other => Err(CbsError::ConfigInvalid(format!("unknown mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Sampling => "sampling",
            Mode::Optimization => "optimization",
        })
    }
}

/// Parameters of a CBS run. `lambda` is always derived from `mode` and the
/// current `beta`, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CbsConfig {
    pub alpha: f64,
    /// Fixed inverse temperature, or the initial value when adaptive.
    pub beta: f64,
    pub mode: Mode,
    pub adaptive_beta: bool,
    /// Target effective-sample-size fraction when `adaptive_beta`.
    pub eta: f64,
    pub beta_max: f64,
    pub max_iters: usize,
    pub cov_frobenius_tol: f64,
    pub seed: u64,
    pub record_trajectory: bool,
    /// Relative eigenvalue clamp used when taking covariance square roots.
    pub psd_tol: f64,
}

impl Default for CbsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            beta: 1.0,
            mode: Mode::Optimization,
            adaptive_beta: false,
            eta: DEFAULT_ETA,
            beta_max: DEFAULT_BETA_MAX,
            max_iters: DEFAULT_MAX_ITERS,
            cov_frobenius_tol: DEFAULT_COV_FROBENIUS_TOL,
            seed: 0,
            record_trajectory: false,
            psd_tol: PSD_REL_TOL,
        }
    }
}

impl CbsConfig {
    /// Validates the configuration for an ensemble of `j` particles.
    pub fn validate(&self, j: usize) -> Result<()> {
        let bad = |msg: String| Err(CbsError::ConfigInvalid(msg));
        if !(0.0..1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.beta_max > 0.0) {
            return bad(format!("beta_max must be positive, got {}", self.beta_max));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.cov_frobenius_tol > 0.0) {
            return bad(format!(
                "cov_frobenius_tol must be positive, got {}",
                self.cov_frobenius_tol
            ));
        }
        if self.adaptive_beta && !(self.eta > 1.0 / j as f64 && self.eta < 1.0) {
            return bad(format!(
                "eta must lie in (1/J, 1) = ({}, 1) with J = {j}, got {}",
                1.0 / j as f64,
                self.eta
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    CovarianceCollapse,
    MaxIters,
}

/// State of the ensemble at the start of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub iteration: usize,
    pub mean: Vec<f64>,
    pub cov_frobenius: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub final_ensemble: Ensemble,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// One record per iteration plus the terminal state, when requested.
    pub trajectory: Option<Vec<TrajectoryRecord>>,
    pub final_beta: f64,
    /// Iterations in which the ESS target was unreachable below `beta_max`.
    pub beta_clamped_iterations: usize,
}

/// What an observer sees once per iteration; the ensemble itself is not exposed.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub iteration: usize,
    pub mean: &'a DVector<f64>,
    pub cov_frobenius: f64,
    pub beta: f64,
}

pub fn frobenius_norm(c: &DMatrix<f64>) -> f64 {
    c.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One CBS update
/// `theta_j <- M + alpha (theta_j - M) + sqrt((1 - alpha^2)/lambda) S xi_j`
/// with `M`, `S S = C` the Gibbs-weighted mean and covariance of the ensemble.
pub fn cbs_step(
    ensemble: &Ensemble,
    f_values: &[f64],
    alpha: f64,
    beta: f64,
    lambda: f64,
    noise: &DMatrix<f64>,
) -> Result<Ensemble> {
    cbs_step_with(ensemble, f_values, alpha, beta, lambda, noise, PSD_REL_TOL)
}

pub fn cbs_step_with(
    ensemble: &Ensemble,
    f_values: &[f64],
    alpha: f64,
    beta: f64,
    lambda: f64,
    noise: &DMatrix<f64>,
    psd_tol: f64,
) -> Result<Ensemble> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "lambda must lie in (0, 1], got {lambda}"
        )));
    }
    if noise.shape() != ensemble.particles().shape() {
        return Err(CbsError::DimensionMismatch {
            expected: ensemble.len() * ensemble.dim(),
            got: noise.len(),
        });
    }
    let w = log_weights(ensemble, f_values, beta)?;
    let moments = weighted_moments(ensemble, &w)?;
    let sqrt_c = sym_sqrt_with(&moments.covariance, psd_tol)?;
    let noise_scale = ((1.0 - alpha * alpha) / lambda).sqrt();

    let p = ensemble.particles();
    let d = ensemble.dim();
    // rows of noise * S^T are (S xi_j)^T
    let kicks = noise * sqrt_c.transpose();
    let next = DMatrix::from_fn(ensemble.len(), d, |j, c| {
        let m = moments.mean[c];
        m + alpha * (p[(j, c)] - m) + noise_scale * kicks[(j, c)]
    });
    Ensemble::new(next)
}

/// Standard normal draws for iteration `n`, one independent substream per
/// particle so the result does not depend on evaluation order.
pub fn iteration_noise(seed: u64, iteration: usize, particles: usize, dim: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(particles, dim);
    for j in 0..particles {
        let mut rng = substream(seed, iteration as u64, j as u64, NOISE_DOMAIN);
        for c in 0..dim {
            out[(j, c)] = StandardNormal.sample(&mut rng);
        }
    }
    out
}

const NOISE_DOMAIN: u64 = 0x6362_735f_6e6f_6973;

/// Independent ChaCha stream keyed by `(seed, stream, index, domain)`.
pub(crate) fn substream(seed: u64, stream: u64, index: u64, domain: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&stream.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&domain.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Evaluates the objective at every particle, in parallel for large ensembles.
/// Output order always matches particle order.
pub fn evaluate_ensemble(objective: &dyn Objective, ensemble: &Ensemble) -> Vec<f64> {
    let rows = ensemble.rows();
    let eval = |x: &Vec<f64>| {
        let v = objective.evaluate(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    if rows.len() >= PARALLEL_EVAL_THRESHOLD {
        rows.par_iter().map(eval).collect()
    } else {
        rows.iter().map(eval).collect()
    }
}

pub fn run(initial: &Ensemble, objective: &dyn Objective, config: &CbsConfig) -> Result<RunResult> {
    run_with_observer(initial, objective, config, |_| {})
}

/// Runs CBS until the ensemble covariance collapses below
/// `cov_frobenius_tol` (Frobenius norm) or `max_iters` steps are taken.
pub fn run_with_observer<F>(
    initial: &Ensemble,
    objective: &dyn Objective,
    config: &CbsConfig,
    mut observer: F,
) -> Result<RunResult>
where
    F: FnMut(&Observation<'_>),
{
    config.validate(initial.len())?;
    if objective.dim() != initial.dim() {
        return Err(CbsError::DimensionMismatch {
            expected: objective.dim(),
            got: initial.dim(),
        });
    }

    let (j, d) = (initial.len(), initial.dim());
    let mut ensemble = initial.clone();
    let mut beta = config.beta;
    let mut clamped = 0;
    let mut trajectory = config.record_trajectory.then(Vec::new);

    for n in 0..=config.max_iters {
        let mean = ensemble.mean();
        let cov_f = frobenius_norm(&ensemble.covariance());
        let stop = if cov_f < config.cov_frobenius_tol {
            Some(StopReason::CovarianceCollapse)
        } else if n == config.max_iters {
            Some(StopReason::MaxIters)
        } else {
            None
        };
        if let Some(stop_reason) = stop {
            if let Some(t) = trajectory.as_mut() {
                t.push(TrajectoryRecord {
                    iteration: n,
                    mean: mean.iter().copied().collect(),
                    cov_frobenius: cov_f,
                    beta,
                });
            }
            return Ok(RunResult {
                final_ensemble: ensemble,
                iterations: n,
                stop_reason,
                trajectory,
                final_beta: beta,
                beta_clamped_iterations: clamped,
            });
        }

        let f_values = evaluate_ensemble(objective, &ensemble);
        if config.adaptive_beta {
            let report = solve_beta(&f_values, config.eta, config.beta_max)?;
            beta = report.beta;
            clamped += usize::from(report.clamped);
        }
        let lambda = config.mode.lambda(beta);

        observer(&Observation {
            iteration: n,
            mean: &mean,
            cov_frobenius: cov_f,
            beta,
        });
        if let Some(t) = trajectory.as_mut() {
            t.push(TrajectoryRecord {
                iteration: n,
                mean: mean.iter().copied().collect(),
                cov_frobenius: cov_f,
                beta,
            });
        }

        let noise = iteration_noise(config.seed, n, j, d);
        ensemble = cbs_step_with(
            &ensemble,
            &f_values,
            config.alpha,
            beta,
            lambda,
            &noise,
            config.psd_tol,
        )?;
    }
    unreachable!("loop returns at n == max_iters")
}
