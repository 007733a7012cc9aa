use std::path::Path;

use cbs_core::bench::{map_refinement, posterior_experiment, sample_ensemble, PosteriorReport, PosteriorSetup};
use cbs_core::engine::{frobenius_norm, TrajectoryRecord, DEFAULT_MAX_ITERS};
use cbs_core::{run, Ensemble, Mode, Objective, StopReason};
use serde::Serialize;

use super::{
    build_objective, cbs_config, initial_law, out_dir, reference_moments, require_particles,
    resolve_particle_config, DEFAULT_SAMPLE_ITERS,
};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, num, numbered, write_json, Csv};

#[derive(Debug, Serialize)]
struct RunSummary {
    command: &'static str,
    objective: String,
    dim: usize,
    particles: usize,
    seed: u64,
    mode: Mode,
    iterations: usize,
    stop_reason: StopReason,
    final_mean: Vec<f64>,
    final_cov_frobenius: f64,
    final_beta: f64,
    beta_clamped_iterations: usize,
    minimizer: Option<Vec<f64>>,
    /// Sup-norm distance of the final mean to the known minimizer.
    final_error: Option<f64>,
}

#[derive(Debug, Serialize)]
struct MomentsReport {
    objective: String,
    particles: usize,
    seed: u64,
    #[serde(flatten)]
    report: PosteriorReport,
    /// Mean after the optimization-mode refinement, when requested.
    map_estimate: Option<Vec<f64>>,
    objective_at_mean: f64,
    objective_at_map_estimate: Option<f64>,
}

fn write_trajectory(path: &Path, d: usize, trajectory: &[TrajectoryRecord]) -> Result<(), CliError> {
    let mut header = vec!["iter".to_string()];
    header.extend(numbered("mean", d));
    header.extend(["cov_frobenius".to_string(), "beta".to_string()]);
    let mut csv = Csv::new(&header);
    for rec in trajectory {
        let mut row = vec![rec.iteration.to_string()];
        row.extend(rec.mean.iter().map(|&x| num(x)));
        row.extend([num(rec.cov_frobenius), num(rec.beta)]);
        csv.row(&row);
    }
    csv.write(path)
}

fn write_ensemble(path: &Path, ensemble: &Ensemble) -> Result<(), CliError> {
    let mut csv = Csv::new(&numbered("theta", ensemble.dim()));
    for row in ensemble.rows() {
        csv.row(&row.iter().map(|&x| num(x)).collect::<Vec<_>>());
    }
    csv.write(path)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn cmd_optimize(merged: ExperimentConfig) -> Result<(), CliError> {
    let cfg = resolve_particle_config(merged, "optimize", Mode::Optimization, DEFAULT_MAX_ITERS)?;
    let j = require_particles(&cfg)?;
    let objective = build_objective(&cfg, cfg.b.unwrap_or(0.0))?;
    let seed = cfg.seed.unwrap_or(0);
    let mut config = cbs_config(&cfg, cfg.alpha.unwrap_or(0.0), seed);
    config.record_trajectory = true;
    config.validate(j).map_err(CliError::config)?;
    let law = initial_law(&cfg, objective.as_ref())?;
    let init = sample_ensemble(seed, j, &law).map_err(CliError::config)?;

    let out = out_dir(&cfg);
    ensure_dir(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;

    let result = run(&init, objective.as_ref(), &config).map_err(CliError::runtime)?;
    let d = objective.dim();
    write_trajectory(
        &out.join("trajectory.csv"),
        d,
        result.trajectory.as_deref().unwrap_or_default(),
    )?;
    let final_mean: Vec<f64> = result.final_ensemble.mean().iter().copied().collect();
    let minimizer = objective.minimizer();
    let final_error = minimizer.as_ref().map(|m| sup_distance(&final_mean, m));
    let summary = RunSummary {
        command: "optimize",
        objective: objective.name().to_string(),
        dim: d,
        particles: j,
        seed,
        mode: Mode::Optimization,
        iterations: result.iterations,
        stop_reason: result.stop_reason,
        final_cov_frobenius: frobenius_norm(&result.final_ensemble.covariance()),
        final_mean,
        final_beta: result.final_beta,
        beta_clamped_iterations: result.beta_clamped_iterations,
        minimizer,
        final_error,
    };
    write_json(&out.join("summary.json"), &summary)
}

pub fn cmd_sample(merged: ExperimentConfig) -> Result<(), CliError> {
    let cfg = resolve_particle_config(merged, "sample", Mode::Sampling, DEFAULT_SAMPLE_ITERS)?;
    let j = require_particles(&cfg)?;
    let objective = build_objective(&cfg, cfg.b.unwrap_or(0.0))?;
    let seed = cfg.seed.unwrap_or(0);
    let mut config = cbs_config(&cfg, cfg.alpha.unwrap_or(0.0), seed);
    config.record_trajectory = true;
    config.validate(j).map_err(CliError::config)?;
    let law = initial_law(&cfg, objective.as_ref())?;
    // validates the initial law before anything is written
    sample_ensemble(seed, 1, &law).map_err(CliError::config)?;
    let n_iters = config.max_iters;

    let out = out_dir(&cfg);
    ensure_dir(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;

    let setup = PosteriorSetup {
        objective: Box::new(objective.clone()),
        init: law,
        reference: reference_moments(&cfg, objective.as_ref()),
    };
    let mut report = posterior_experiment(&setup, j, &config, n_iters).map_err(CliError::runtime)?;
    let ensemble = report
        .final_ensemble
        .take()
        .ok_or_else(|| CliError::Runtime("final ensemble missing".into()))?;
    let trajectory = report.trajectory.take().unwrap_or_default();
    let d = objective.dim();
    write_trajectory(&out.join("trajectory.csv"), d, &trajectory)?;
    write_ensemble(&out.join("ensemble.csv"), &ensemble)?;

    let map_estimate = match cfg.refine_iters {
        Some(0) | None => None,
        Some(n) => {
            // adaptive beta drives the collapse onto the best particles
            let mut refine = config.clone();
            refine.adaptive_beta = true;
            let refined =
                map_refinement(&ensemble, objective.as_ref(), &refine, n).map_err(CliError::runtime)?;
            Some(refined.mean().iter().copied().collect::<Vec<f64>>())
        }
    };
    let moments = MomentsReport {
        objective: objective.name().to_string(),
        particles: j,
        seed,
        objective_at_mean: objective.evaluate(&report.mean),
        objective_at_map_estimate: map_estimate.as_ref().map(|m| objective.evaluate(m)),
        map_estimate,
        report,
    };
    write_json(&out.join("moments.json"), &moments)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sup_distance_is_max_abs() {
        assert_eq!(sup_distance(&[1.0, -2.0], &[0.5, 1.0]), 3.0);
    }
}
