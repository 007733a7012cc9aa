//! Experiment configuration: JSON file, command-line overrides, defaults.

use std::path::{Path, PathBuf};

use cbs_core::bench::Marginal;
use cbs_core::Mode;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "CBS_SEED";
pub const DEFAULT_OUT: &str = "./results";

/// Every field is optional; unset fields take the per-command defaults in
/// [`Resolved`]. The on-disk format is this struct as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    /// Center of the "quadratic" objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    /// Row-major covariance of the "quadratic" objective.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub covariance: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", alias = "J")]
    pub particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive_beta: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cov_frobenius_tol: Option<f64>,
    /// Iteration budget: the exact count for `sample`, a cap otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    /// Product initial law; overrides `init_std`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<Marginal>>,
    /// `sample`: optimization-mode iterations run from the final ensemble.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub particle_counts: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub modes: Option<Vec<Mode>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub betas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dims: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field; } )*
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: ExperimentConfig) -> Self {
        overlay!(self, top;
            objective, d, b, center, covariance, particles, alpha, beta, mode,
            adaptive_beta, eta, beta_max, cov_frobenius_tol, iters, seed, init_std,
            init, refine_iters, n_runs, particle_counts, alphas, bs, modes, betas,
            dims, dt, out,
        );
        self
    }

    /// File, then environment seed, then command-line flags.
    pub fn merge(
        file: Option<ExperimentConfig>,
        env_seed: Option<&str>,
        flags: ExperimentConfig,
    ) -> Result<Self, CliError> {
        let mut cfg = file.unwrap_or_default();
        if let Some(raw) = env_seed {
            let seed = raw.trim().parse::<u64>().map_err(|_| {
                CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got '{raw}'"))
            })?;
            cfg.seed = Some(seed);
        }
        Ok(cfg.overlay(flags))
    }
}
