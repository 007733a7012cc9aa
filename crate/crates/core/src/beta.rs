//! Adaptive inverse temperature from an effective-sample-size target.

use serde::{Deserialize, Serialize};

use crate::error::{CbsError, Result};
use crate::moments::logsumexp;

pub const DEFAULT_ETA: f64 = 0.5;
pub const DEFAULT_BETA_MAX: f64 = 1e15;
/// Bisection stops once `|J_eff - eta J| <= ESS_REL_TOL * J`.
pub const ESS_REL_TOL: f64 = 1e-6;
pub const MAX_BISECTION_ITERS: usize = 200;

/// Outcome of [`solve_beta`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EssSolveReport {
    pub beta: f64,
    pub j_eff_achieved: f64,
    /// The target was not reachable below `beta_max`; `beta == beta_max`.
    pub clamped: bool,
    pub bisection_iterations: usize,
}

/// Shifted log-values `-beta (f_j - f_min)`; infinite `f` maps to `-inf`.
fn scaled(f_values: &[f64], f_min: f64, beta: f64) -> Vec<f64> {
    f_values
        .iter()
        .map(|&f| {
            if f.is_finite() {
                -beta * (f - f_min)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

fn finite_min(f_values: &[f64]) -> Result<f64> {
    let m = f_values
        .iter()
        .copied()
        .filter(|f| f.is_finite())
        .fold(f64::INFINITY, f64::min);
    if m == f64::INFINITY {
        Err(CbsError::AllInfinite)
    } else {
        Ok(m)
    }
}

/// `(sum w)^2 / sum w^2` for `w_j = exp(-beta f_j)`, evaluated in log space.
///
/// Particles with infinite `f` carry no weight, so at `beta = 0` the value
/// is the number of particles with finite `f`.
pub fn effective_sample_size(f_values: &[f64], beta: f64) -> Result<f64> {
    let f_min = finite_min(f_values)?;
    Ok(ess_shifted(f_values, f_min, beta))
}

fn ess_shifted(f_values: &[f64], f_min: f64, beta: f64) -> f64 {
    let single = scaled(f_values, f_min, beta);
    let double: Vec<f64> = single.iter().map(|v| 2.0 * v).collect();
    let j_eff = (2.0 * logsumexp(&single) - logsumexp(&double)).exp();
    let finite = f_values.iter().filter(|f| f.is_finite()).count() as f64;
    j_eff.clamp(1.0, finite)
}

/// Finds `beta` with `J_eff(beta) = eta J` by doubling then bisection.
pub fn solve_beta(f_values: &[f64], eta: f64, beta_max: f64) -> Result<EssSolveReport> {
    let j = f_values.len();
    if j < 2 {
        return Err(CbsError::ConfigInvalid(
            "solving for beta needs at least two particles".into(),
        ));
    }
    if !(eta > 1.0 / j as f64 && eta < 1.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "eta must lie in (1/J, 1) = ({}, 1), got {eta}",
            1.0 / j as f64
        )));
    }
    if !(beta_max > 0.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "beta_max must be positive, got {beta_max}"
        )));
    }
    let f_min = finite_min(f_values)?;
    let target = eta * j as f64;
    let tol = ESS_REL_TOL * j as f64;
    let ess = |beta: f64| ess_shifted(f_values, f_min, beta);

    let mut lo = 0.0;
    let mut hi = 1.0f64.min(beta_max);
    loop {
        if ess(hi) < target {
            break;
        }
        if hi >= beta_max {
            return Ok(EssSolveReport {
                beta: beta_max,
                j_eff_achieved: ess(beta_max),
                clamped: true,
                bisection_iterations: 0,
            });
        }
        lo = hi;
        hi = (2.0 * hi).min(beta_max);
    }

    let mut mid = 0.5 * (lo + hi);
    let mut value = ess(mid);
    let mut iterations = 1;
    while (value - target).abs() > tol && iterations < MAX_BISECTION_ITERS {
        if value > target {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = 0.5 * (lo + hi);
        value = ess(mid);
        iterations += 1;
    }
    Ok(EssSolveReport {
        beta: mid,
        j_eff_achieved: value,
        clamped: false,
        bisection_iterations: iterations,
    })
}
