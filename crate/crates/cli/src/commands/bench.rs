use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use cbs_core::bench::{derive_seed, success_rate_experiment, RunOutcome, SuccessRateReport};
use cbs_core::engine::DEFAULT_MAX_ITERS;
use cbs_core::Mode;
use serde::Serialize;

use super::{build_objective, cbs_config, default_init_std, out_dir, particle_defaults};
use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::output::{ensure_dir, num, write_json, Csv, StreamingCsv};

fn defaults() -> ExperimentConfig {
    ExperimentConfig {
        particle_counts: Some(vec![50, 100, 200]),
        alphas: Some(vec![0.0, 0.5]),
        bs: Some(vec![0.0, 1.0, 2.0]),
        n_runs: Some(100),
        ..particle_defaults(Mode::Optimization, DEFAULT_MAX_ITERS)
    }
}

#[derive(Debug, Serialize)]
struct Cell {
    b: f64,
    alpha: f64,
    particles: usize,
    cell_seed: u64,
    report: SuccessRateReport,
}

fn install_interrupt_flag() -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let handler_flag = flag.clone();
    // a second handler cannot be installed; keep going without one
    let _ = ctrlc::set_handler(move || handler_flag.store(true, Ordering::SeqCst));
    flag
}

pub fn cmd_bench(merged: ExperimentConfig) -> Result<(), CliError> {
    if let Some(m) = merged.mode {
        if m != Mode::Optimization {
            return Err(CliError::Config(format!(
                "'bench' measures optimization success rates, but mode {m} was requested"
            )));
        }
    }
    if merged.objective.is_none() {
        return Err(CliError::Usage("missing required option --objective for 'bench'".into()));
    }
    let cfg = defaults().overlay(merged);
    let js = cfg.particle_counts.clone().unwrap_or_default();
    let alphas = cfg.alphas.clone().unwrap_or_default();
    let bs = cfg.bs.clone().unwrap_or_default();
    let n_runs = cfg.n_runs.unwrap_or(0);
    let init_std = cfg.init_std.unwrap_or_else(default_init_std);
    if js.is_empty() || alphas.is_empty() || bs.is_empty() {
        return Err(CliError::Config(
            "empty benchmark matrix: Js, alphas and bs all need at least one value".into(),
        ));
    }
    if n_runs == 0 {
        return Err(CliError::Config("n_runs must be at least 1".into()));
    }
    if !(init_std > 0.0) || !init_std.is_finite() {
        return Err(CliError::Config(format!("init_std must be positive, got {init_std}")));
    }
    if cfg.init.is_some() {
        return Err(CliError::Config("'bench' draws N(0, init_std^2 I); 'init' is not supported".into()));
    }
    // every cell is validated before the first one runs
    let master = cfg.seed.unwrap_or(0);
    let mut plan = Vec::new();
    for &b in &bs {
        let objective = build_objective(&cfg, b)?;
        if objective.minimizer().is_none() {
            return Err(CliError::Config(format!(
                "objective '{}' has no known minimizer",
                objective.name()
            )));
        }
        for &alpha in &alphas {
            for &j in &js {
                let seed = derive_seed(master, plan.len() as u64);
                let config = cbs_config(&cfg, alpha, seed);
                config.validate(j).map_err(CliError::config)?;
                plan.push((b, alpha, j, objective.clone(), config));
            }
        }
    }

    let out = out_dir(&cfg);
    ensure_dir(&out)?;
    std::fs::write(out.join("config.json"), cfg.to_json())?;
    let interrupted = install_interrupt_flag();

    let name = cfg.objective.clone().unwrap_or_default();
    let d = plan[0].3.as_ref().dim();
    let mut cells_csv = StreamingCsv::create(
        &out.join("cells.csv"),
        &[
            "objective", "d", "b", "alpha", "J", "adaptive_beta", "runs", "successes",
            "success_rate", "mean_iterations", "mean_final_error", "failed_runs",
            "beta_clamped_runs",
        ]
        .map(String::from),
    )?;
    let mut cells = Vec::with_capacity(plan.len());
    for (b, alpha, j, objective, config) in plan {
        if interrupted.load(Ordering::SeqCst) {
            return Err(CliError::Interrupted);
        }
        let report = success_rate_experiment(objective.as_ref(), &config, j, n_runs, init_std)
            .map_err(CliError::runtime)?;
        let failed = report
            .records
            .iter()
            .filter(|r| r.outcome == RunOutcome::Error)
            .count();
        let clamped = report
            .records
            .iter()
            .filter(|r| r.beta_clamped_iterations > 0)
            .count();
        cells_csv.row(&[
            name.clone(),
            d.to_string(),
            num(b),
            num(alpha),
            j.to_string(),
            config.adaptive_beta.to_string(),
            report.runs.to_string(),
            report.successes.to_string(),
            num(report.success_rate),
            num(report.mean_iterations),
            num(report.mean_final_error.unwrap_or(f64::NAN)),
            failed.to_string(),
            clamped.to_string(),
        ])?;
        cells.push(Cell {
            b,
            alpha,
            particles: j,
            cell_seed: config.seed,
            report,
        });
    }
    if interrupted.load(Ordering::SeqCst) {
        return Err(CliError::Interrupted);
    }

    // one row per (b, alpha), three columns per J
    let mut header = vec!["b".to_string(), "alpha".to_string()];
    for j in &js {
        header.extend([
            format!("J{j}_success_rate"),
            format!("J{j}_mean_iterations"),
            format!("J{j}_mean_final_error"),
        ]);
    }
    let mut table = Csv::new(&header);
    for row in cells.chunks(js.len()) {
        let mut cols = vec![num(row[0].b), num(row[0].alpha)];
        for cell in row {
            cols.extend([
                num(cell.report.success_rate),
                num(cell.report.mean_iterations),
                num(cell.report.mean_final_error.unwrap_or(f64::NAN)),
            ]);
        }
        table.row(&cols);
    }
    table.write(&out.join("table.csv"))?;
    write_json(&out.join("bench.json"), &cells)
}
