//! Subcommand implementations and the shared resolution of configs into
//! core types.

mod bench;
mod run;
mod theory;

use std::path::PathBuf;
use std::sync::Arc;

use cbs_core::bench::{Marginal, MomentReference, ELLIPTIC_INIT};
use cbs_core::engine::{DEFAULT_COV_FROBENIUS_TOL, DEFAULT_MAX_ITERS};
use cbs_core::objectives::ObjectiveParams;
use cbs_core::{objective_by_name, CbsConfig, Mode, Objective};

pub use bench::cmd_bench;
pub use run::{cmd_optimize, cmd_sample};
pub use theory::cmd_theory;

use crate::config::{ExperimentConfig, DEFAULT_OUT};
use crate::error::CliError;

pub const DEFAULT_PARTICLES: usize = 100;
pub const DEFAULT_SAMPLE_ITERS: usize = 100;

/// `N(0, 3 I)` initial ensembles.
pub fn default_init_std() -> f64 {
    3f64.sqrt()
}

/// Defaults shared by the particle commands. `init_std` stays unset so that
/// presets with their own initial law keep it.
fn particle_defaults(mode: Mode, iters: usize) -> ExperimentConfig {
    let base = CbsConfig::default();
    ExperimentConfig {
        d: Some(2),
        b: Some(0.0),
        particles: Some(DEFAULT_PARTICLES),
        alpha: Some(base.alpha),
        beta: Some(base.beta),
        mode: Some(mode),
        adaptive_beta: Some(false),
        eta: Some(base.eta),
        beta_max: Some(base.beta_max),
        cov_frobenius_tol: Some(DEFAULT_COV_FROBENIUS_TOL),
        iters: Some(iters),
        seed: Some(0),
        out: Some(PathBuf::from(DEFAULT_OUT)),
        ..Default::default()
    }
}

/// Rejects a mode that disagrees with the subcommand, then fills defaults.
fn resolve_particle_config(
    merged: ExperimentConfig,
    command: &str,
    mode: Mode,
    iters: usize,
) -> Result<ExperimentConfig, CliError> {
    if let Some(m) = merged.mode {
        if m != mode {
            return Err(CliError::Config(format!(
                "'{command}' runs in {mode} mode, but mode {m} was requested"
            )));
        }
    }
    if merged.objective.is_none() {
        return Err(CliError::Usage(format!(
            "missing required option --objective for '{command}'"
        )));
    }
    Ok(particle_defaults(mode, iters).overlay(merged))
}

fn objective_params(cfg: &ExperimentConfig, b: f64) -> ObjectiveParams {
    ObjectiveParams {
        d: cfg.d.unwrap_or(2),
        b,
        center: cfg.center.clone(),
        covariance: cfg.covariance.clone(),
    }
}

fn build_objective(cfg: &ExperimentConfig, b: f64) -> Result<Arc<dyn Objective>, CliError> {
    let name = cfg.objective.as_deref().unwrap_or_default();
    objective_by_name(name, &objective_params(cfg, b)).map_err(CliError::config)
}

/// CBS parameters from a resolved config (all particle fields set).
fn cbs_config(cfg: &ExperimentConfig, alpha: f64, seed: u64) -> CbsConfig {
    CbsConfig {
        alpha,
        beta: cfg.beta.unwrap_or(1.0),
        mode: cfg.mode.unwrap_or(Mode::Optimization),
        adaptive_beta: cfg.adaptive_beta.unwrap_or(false),
        eta: cfg.eta.unwrap_or(CbsConfig::default().eta),
        beta_max: cfg.beta_max.unwrap_or(CbsConfig::default().beta_max),
        max_iters: cfg.iters.unwrap_or(DEFAULT_MAX_ITERS),
        cov_frobenius_tol: cfg.cov_frobenius_tol.unwrap_or(DEFAULT_COV_FROBENIUS_TOL),
        seed,
        record_trajectory: false,
        psd_tol: CbsConfig::default().psd_tol,
    }
}

/// Explicit `init`, the elliptic preset's law, or `N(0, init_std^2 I)`.
fn initial_law(cfg: &ExperimentConfig, objective: &dyn Objective) -> Result<Vec<Marginal>, CliError> {
    let d = objective.dim();
    let law = match &cfg.init {
        Some(init) => init.clone(),
        None if objective.name() == "elliptic-2d" && cfg.init_std.is_none() => ELLIPTIC_INIT.to_vec(),
        None => {
            let std = cfg.init_std.unwrap_or_else(default_init_std);
            if !(std >= 0.0) || !std.is_finite() {
                return Err(CliError::Config(format!("init_std must be >= 0, got {std}")));
            }
            vec![Marginal::Normal { mean: 0.0, std }; d]
        }
    };
    if law.len() != d {
        return Err(CliError::Config(format!(
            "initial law has {} coordinates, objective has dimension {d}",
            law.len()
        )));
    }
    Ok(law)
}

/// Exact posterior moments where they are known.
fn reference_moments(cfg: &ExperimentConfig, objective: &dyn Objective) -> Option<MomentReference> {
    match objective.name() {
        "elliptic-2d" => Some(MomentReference::elliptic_posterior()),
        "quadratic" => {
            let d = objective.dim();
            let mean = cfg
                .center
                .clone()
                .unwrap_or_else(|| vec![cfg.b.unwrap_or(0.0); d]);
            let flat = cfg.covariance.clone().unwrap_or_else(|| {
                (0..d * d).map(|k| if k / d == k % d { 1.0 } else { 0.0 }).collect()
            });
            let covariance = flat.chunks(d).map(|r| r.to_vec()).collect();
            Some(MomentReference { mean, covariance })
        }
        _ => None,
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn require_particles(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    match cfg.particles {
        Some(0) => Err(CliError::Config("J must be at least 1".into())),
        Some(j) => Ok(j),
        None => Ok(DEFAULT_PARTICLES),
    }
}
