//! Experiment protocols: repeated optimization runs scored against a known
//! minimizer, posterior-moment reproduction in sampling mode, and
//! optimization-mode refinement of a sampling ensemble.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    frobenius_norm, run, substream, CbsConfig, Mode, StopReason, TrajectoryRecord,
};
use crate::error::{CbsError, Result};
use crate::moments::Ensemble;
use crate::objectives::{elliptic_2d, Objective};

/// A run succeeds when its final mean is within this sup-norm distance of the minimizer.
pub const SUCCESS_RADIUS: f64 = 0.25;
pub const DEFAULT_REFINEMENT_ITERS: usize = 50;

const INIT_DOMAIN: u64 = 0x6362_735f_696e_6974;

/// Posterior moments of the two-parameter elliptic problem (reference values).
pub const ELLIPTIC_POSTERIOR_MEAN: [f64; 2] = [-2.714, 104.346];
pub const ELLIPTIC_POSTERIOR_COV: [[f64; 2]; 2] = [[0.0129, 0.0288], [0.0288, 0.0808]];
/// Published CBS estimate for `J = 1000`, `alpha = beta = 1/2`, 100 iterations.
pub const ELLIPTIC_CBS_MEAN: [f64; 2] = [-2.712, 104.356];
pub const ELLIPTIC_CBS_COV: [[f64; 2]; 2] = [[0.0135, 0.0302], [0.0302, 0.0829]];

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `index` under `master`; depends only on the pair, so runs can
/// be executed in any order.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// One coordinate of a product initial law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Normal { mean, std } => mean.is_finite() && std.is_finite() && std >= 0.0,
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
        };
        if ok {
            Ok(())
        } else {
            Err(CbsError::ConfigInvalid(format!("invalid initial marginal {self:?}")))
        }
    }
}

/// `particles` independent draws from the product of `marginals`; particle
/// `j` only depends on `(seed, j)`.
pub fn sample_ensemble(seed: u64, particles: usize, marginals: &[Marginal]) -> Result<Ensemble> {
    if particles == 0 || marginals.is_empty() {
        return Err(CbsError::InvalidEnsemble(
            "need at least one particle and one dimension".into(),
        ));
    }
    for m in marginals {
        m.validate()?;
    }
    let d = marginals.len();
    let mut p = DMatrix::zeros(particles, d);
    for j in 0..particles {
        let mut rng = substream(seed, 0, j as u64, INIT_DOMAIN);
        for (c, m) in marginals.iter().enumerate() {
            p[(j, c)] = match *m {
                Marginal::Normal { mean, std } => {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mean + std * z
                }
                Marginal::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            };
        }
    }
    Ensemble::new(p)
}

/// `particles` draws from `N(mean, std^2 I)`.
pub fn gaussian_ensemble(seed: u64, particles: usize, mean: &[f64], std: f64) -> Result<Ensemble> {
    let marginals: Vec<Marginal> = mean
        .iter()
        .map(|&mean| Marginal::Normal { mean, std })
        .collect();
    sample_ensemble(seed, particles, &marginals)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Success,
    /// Finished but the final mean is outside [`SUCCESS_RADIUS`].
    Miss,
    /// The run loop returned an error.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub index: usize,
    pub seed: u64,
    pub outcome: RunOutcome,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    pub final_mean: Vec<f64>,
    /// Sup-norm distance from the final mean to the minimizer.
    pub final_error: f64,
    pub beta_clamped_iterations: usize,
    pub error: Option<String>,
}

impl RunRecord {
    pub fn success(&self) -> bool {
        self.outcome == RunOutcome::Success
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRateReport {
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Average over runs that finished without error.
    pub mean_iterations: f64,
    /// Average over successful runs; `None` when no run succeeded.
    pub mean_final_error: Option<f64>,
    pub records: Vec<RunRecord>,
}

impl SuccessRateReport {
    /// Aggregates per-run records; the result does not depend on their order.
    pub fn from_records(mut records: Vec<RunRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        let runs = records.len();
        let successes = records.iter().filter(|r| r.success()).count();
        let finished: Vec<&RunRecord> = records
            .iter()
            .filter(|r| r.outcome != RunOutcome::Error)
            .collect();
        let mean_iterations = if finished.is_empty() {
            f64::NAN
        } else {
            finished.iter().map(|r| r.iterations as f64).sum::<f64>() / finished.len() as f64
        };
        let mean_final_error = (successes > 0).then(|| {
            records
                .iter()
                .filter(|r| r.success())
                .map(|r| r.final_error)
                .sum::<f64>()
                / successes as f64
        });
        Self {
            runs,
            successes,
            success_rate: if runs == 0 {
                0.0
            } else {
                successes as f64 / runs as f64
            },
            mean_iterations,
            mean_final_error,
            records,
        }
    }
}

/// One scored optimization run from `N(0, init_std^2 I)`.
pub fn single_success_run(
    objective: &dyn Objective,
    minimizer: &[f64],
    config: &CbsConfig,
    particles: usize,
    init_std: f64,
    index: usize,
) -> RunRecord {
    let seed = derive_seed(config.seed, index as u64);
    let mut run_config = config.clone();
    run_config.seed = seed;
    run_config.record_trajectory = false;
    let zero = vec![0.0; objective.dim()];
    let result = gaussian_ensemble(seed, particles, &zero, init_std)
        .and_then(|init| run(&init, objective, &run_config));
    match result {
        Ok(r) => {
            let final_mean: Vec<f64> = r.final_ensemble.mean().iter().copied().collect();
            let final_error = sup_distance(&final_mean, minimizer);
            RunRecord {
                index,
                seed,
                outcome: if final_error < SUCCESS_RADIUS {
                    RunOutcome::Success
                } else {
                    RunOutcome::Miss
                },
                iterations: r.iterations,
                stop_reason: Some(r.stop_reason),
                final_mean,
                final_error,
                beta_clamped_iterations: r.beta_clamped_iterations,
                error: None,
            }
        }
        Err(e) => RunRecord {
            index,
            seed,
            outcome: RunOutcome::Error,
            iterations: 0,
            stop_reason: None,
            final_mean: Vec::new(),
            final_error: f64::INFINITY,
            beta_clamped_iterations: 0,
            error: Some(e.to_string()),
        },
    }
}

/// Runs `n_runs` independent optimizations with seeds derived from
/// `config.seed` and initial ensembles `N(0, init_std^2 I)`, in parallel.
pub fn success_rate_experiment(
    objective: &dyn Objective,
    config: &CbsConfig,
    particles: usize,
    n_runs: usize,
    init_std: f64,
) -> Result<SuccessRateReport> {
    let minimizer = objective.minimizer().ok_or_else(|| {
        CbsError::ConfigInvalid(format!(
            "objective '{}' has no known minimizer",
            objective.name()
        ))
    })?;
    config.validate(particles)?;
    if n_runs == 0 {
        return Err(CbsError::ConfigInvalid("n_runs must be positive".into()));
    }
    let records: Vec<RunRecord> = (0..n_runs)
        .into_par_iter()
        .map(|i| single_success_run(objective, &minimizer, config, particles, init_std, i))
        .collect();
    Ok(SuccessRateReport::from_records(records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentReference {
    pub mean: Vec<f64>,
    /// Row-major.
    pub covariance: Vec<Vec<f64>>,
}

impl MomentReference {
    pub fn elliptic_posterior() -> Self {
        Self {
            mean: ELLIPTIC_POSTERIOR_MEAN.to_vec(),
            covariance: ELLIPTIC_POSTERIOR_COV.iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn elliptic_cbs_estimate() -> Self {
        Self {
            mean: ELLIPTIC_CBS_MEAN.to_vec(),
            covariance: ELLIPTIC_CBS_COV.iter().map(|r| r.to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorReport {
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    /// The final covariance has Frobenius norm below the collapse tolerance.
    pub collapsed: bool,
    pub reference: Option<MomentReference>,
    /// `mean - reference.mean`.
    pub mean_deviation: Option<Vec<f64>>,
    /// `(cov - reference.cov) / reference.cov`, elementwise.
    pub covariance_rel_deviation: Option<Vec<Vec<f64>>>,
    #[serde(skip)]
    pub final_ensemble: Option<Ensemble>,
    /// Present when the config asked for a recorded trajectory.
    #[serde(skip)]
    pub trajectory: Option<Vec<TrajectoryRecord>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

/// Objective and initial law for a posterior experiment.
pub struct PosteriorSetup {
    pub objective: Box<dyn Objective>,
    pub init: Vec<Marginal>,
    pub reference: Option<MomentReference>,
}

/// Initial law of the elliptic problem: `u1 ~ N(0, 1)`, `u2 ~ U(90, 110)`.
pub const ELLIPTIC_INIT: [Marginal; 2] = [
    Marginal::Normal { mean: 0.0, std: 1.0 },
    Marginal::Uniform { lo: 90.0, hi: 110.0 },
];

impl PosteriorSetup {
    pub fn elliptic_2d() -> Self {
        Self {
            objective: Box::new(elliptic_2d()),
            init: ELLIPTIC_INIT.to_vec(),
            reference: Some(MomentReference::elliptic_posterior()),
        }
    }
}

/// Runs `n_iters` sampling-mode iterations from the setup's initial law and
/// reports the empirical moments of the final ensemble.
pub fn posterior_experiment(
    setup: &PosteriorSetup,
    particles: usize,
    config: &CbsConfig,
    n_iters: usize,
) -> Result<PosteriorReport> {
    if config.mode != Mode::Sampling {
        return Err(CbsError::ConfigInvalid(
            "posterior experiments run in sampling mode".into(),
        ));
    }
    let mut run_config = config.clone();
    run_config.max_iters = n_iters;
    let init = sample_ensemble(config.seed, particles, &setup.init)?;
    let r = run(&init, setup.objective.as_ref(), &run_config)?;
    let mean: Vec<f64> = r.final_ensemble.mean().iter().copied().collect();
    let cov = r.final_ensemble.covariance();
    let collapsed = frobenius_norm(&cov) < run_config.cov_frobenius_tol;
    let covariance = rows_of(&cov);
    let mean_deviation = setup
        .reference
        .as_ref()
        .map(|rf| mean.iter().zip(&rf.mean).map(|(a, b)| a - b).collect());
    let covariance_rel_deviation = setup.reference.as_ref().map(|rf| {
        covariance
            .iter()
            .zip(&rf.covariance)
            .map(|(row, rrow)| row.iter().zip(rrow).map(|(a, b)| (a - b) / b).collect())
            .collect()
    });
    Ok(PosteriorReport {
        mean,
        covariance,
        iterations: r.iterations,
        stop_reason: r.stop_reason,
        collapsed,
        reference: setup.reference.clone(),
        mean_deviation,
        covariance_rel_deviation,
        final_ensemble: Some(r.final_ensemble),
        trajectory: r.trajectory,
    })
}

/// Continues from `ensemble` in optimization mode for `n_iters` iterations;
/// the mean of the result approximates the MAP point.
pub fn map_refinement(
    ensemble: &Ensemble,
    objective: &dyn Objective,
    config: &CbsConfig,
    n_iters: usize,
) -> Result<Ensemble> {
    let mut run_config = config.clone();
    run_config.mode = Mode::Optimization;
    run_config.max_iters = n_iters;
    run_config.record_trajectory = false;
    Ok(run(ensemble, objective, &run_config)?.final_ensemble)
}

/// Sup-norm distance of `mean` to `reference`, for reuse by report consumers.
pub fn sup_norm_error(mean: &DVector<f64>, reference: &[f64]) -> f64 {
    sup_distance(mean.as_slice(), reference)
}
