use cbs_core::gaussian::sweep::{alpha_label, random_instance, run_theory_case, theory_grid, RateFit, TheoryCase};
use cbs_core::gaussian::{MomentDeviation, DEFAULT_DT};
use cbs_core::Mode;
use serde::Serialize;

use super::out_dir;
use crate::config::{ExperimentConfig, DEFAULT_OUT};
use crate::error::CliError;
use crate::output::{ensure_dir, num, write_json, Csv};

/// Sampling fits are geometric factors, compared in absolute terms.
pub const SAMPLING_FIT_TOL: f64 = 1e-3;
/// Optimization fits are algebraic exponents, compared in relative terms.
pub const OPTIMIZATION_FIT_TOL: f64 = 0.02;
/// Slack for round-off in the envelope checks.
pub const BOUND_SLACK: f64 = 1e-9;

fn defaults() -> ExperimentConfig {
    ExperimentConfig {
        modes: Some(vec![Mode::Sampling, Mode::Optimization]),
        alphas: Some(vec![0.0, 0.3, 0.7, 1.0]),
        betas: Some(vec![0.5, 2.0, 8.0]),
        dims: Some(vec![1, 3]),
        dt: Some(DEFAULT_DT),
        seed: Some(0),
        out: Some(DEFAULT_OUT.into()),
        ..Default::default()
    }
}

#[derive(Debug, Serialize)]
struct FitEntry {
    fitted: f64,
    predicted: f64,
    abs_error: f64,
    rel_error: f64,
    within_tolerance: bool,
}

impl FitEntry {
    fn new(fit: &RateFit, mode: Mode) -> Self {
        let within_tolerance = match mode {
            Mode::Sampling => fit.abs_error() <= SAMPLING_FIT_TOL,
            Mode::Optimization => fit.rel_error() <= OPTIMIZATION_FIT_TOL,
        };
        FitEntry {
            fitted: fit.fitted,
            predicted: fit.predicted,
            abs_error: fit.abs_error(),
            rel_error: fit.rel_error(),
            within_tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
struct CaseEntry {
    index: usize,
    file: String,
    #[serde(flatten)]
    case: TheoryCase,
    continuous: bool,
    alpha_case: &'static str,
    lambda: f64,
    k0: f64,
    /// `geometric_factor` for sampling, `algebraic_exponent` for optimization.
    fit_kind: &'static str,
    fit_window: [f64; 2],
    mean_fit: FitEntry,
    cov_fit: FitEntry,
    /// Largest observed/bound ratio over the whole trajectory.
    worst_mean_bound: f64,
    worst_cov_bound: f64,
    bounds_hold: bool,
}

pub fn cmd_theory(merged: ExperimentConfig) -> Result<(), CliError> {
    let cfg = defaults().overlay(merged);
    let modes = cfg.modes.clone().unwrap_or_default();
    let alphas = cfg.alphas.clone().unwrap_or_default();
    let betas = cfg.betas.clone().unwrap_or_default();
    let dims = cfg.dims.clone().unwrap_or_default();
    let dt = cfg.dt.unwrap_or(DEFAULT_DT);
    if modes.is_empty() || alphas.is_empty() || betas.is_empty() || dims.is_empty() {
        return Err(CliError::Config(
            "empty parameter grid: modes, alphas, betas and dims all need at least one value".into(),
        ));
    }
    if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(CliError::Config(format!("alpha must lie in [0, 1], got {a}")));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
        return Err(CliError::Config(format!("beta must be positive, got {b}")));
    }
    if dims.contains(&0) {
        return Err(CliError::Config("dimensions must be >= 1".into()));
    }
    if !(dt > 0.0) || dt > 10.0 {
        return Err(CliError::Config(format!("dt must lie in (0, 10], got {dt}")));
    }

    let out = out_dir(&cfg);
    let case_dir = out.join("cases");
    ensure_dir(&case_dir)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;

    let grid = theory_grid(&modes, &alphas, &betas, &dims, cfg.seed.unwrap_or(0));
    let mut entries = Vec::with_capacity(grid.len());
    let mut summary = Csv::new(
        &[
            "case", "mode", "alpha", "beta", "d", "k0", "mean_fitted", "mean_predicted",
            "cov_fitted", "cov_predicted", "worst_mean_bound", "worst_cov_bound",
        ]
        .map(String::from),
    );
    for (index, case) in grid.into_iter().enumerate() {
        let (target, state0) = random_instance(case.d, case.seed).map_err(CliError::runtime)?;
        let result = run_theory_case(case, &target, &state0, Some(dt)).map_err(CliError::runtime)?;
        let c_inf = target.steady_covariance(case.lambda(), case.beta);
        let dev0 = MomentDeviation::from_state(&state0, &target, &c_inf);
        let (mean0, cov0) = (target.vec_norm(&dev0.dm), target.mat_norm(&dev0.dc));

        let file = format!(
            "case_{index:03}_{}_{}_beta{}_d{}.csv",
            case.mode,
            alpha_label(case.alpha),
            case.beta,
            case.d
        );
        let x_name = if case.is_continuous() { "t" } else { "n" };
        let mut csv = Csv::new(
            &[
                x_name, "mean_error_A", "cov_error_A", "mean_ratio", "cov_ratio", "cov_loewner",
                "mean_bound", "cov_bound",
            ]
            .map(String::from),
        );
        for p in &result.points {
            let x = if case.is_continuous() {
                num(p.x)
            } else {
                format!("{}", p.x as usize)
            };
            csv.row(&[
                x,
                num(p.mean_ratio * mean0),
                num(p.cov_ratio * cov0),
                num(p.mean_ratio),
                num(p.cov_ratio),
                num(p.cov_loewner),
                num(result.envelope.mean_bound(p.x)),
                num(result.envelope.cov_bound(p.x)),
            ]);
        }
        csv.write(&case_dir.join(&file))?;

        summary.row(&[
            index.to_string(),
            case.mode.to_string(),
            num(case.alpha),
            num(case.beta),
            case.d.to_string(),
            num(result.k0),
            num(result.mean_fit.fitted),
            num(result.mean_fit.predicted),
            num(result.cov_fit.fitted),
            num(result.cov_fit.predicted),
            num(result.worst_mean_bound),
            num(result.worst_cov_bound),
        ]);
        entries.push(CaseEntry {
            index,
            file: format!("cases/{file}"),
            case,
            continuous: case.is_continuous(),
            alpha_case: alpha_label(case.alpha),
            lambda: case.lambda(),
            k0: result.k0,
            fit_kind: match case.mode {
                Mode::Sampling => "geometric_factor",
                Mode::Optimization => "algebraic_exponent",
            },
            fit_window: [result.mean_fit.x1, result.mean_fit.x2],
            mean_fit: FitEntry::new(&result.mean_fit, case.mode),
            cov_fit: FitEntry::new(&result.cov_fit, case.mode),
            worst_mean_bound: result.worst_mean_bound,
            worst_cov_bound: result.worst_cov_bound,
            bounds_hold: result.worst_mean_bound <= 1.0 + BOUND_SLACK
                && result.worst_cov_bound <= 1.0 + BOUND_SLACK,
        });
    }
    summary.write(&out.join("rates.csv"))?;
    write_json(&out.join("rates.json"), &entries)
}
