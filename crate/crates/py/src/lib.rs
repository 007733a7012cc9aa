//! Python bindings. Matrices cross the boundary as lists of rows.

use std::sync::{Arc, Mutex};

use cbs_core::bench::{derive_seed as core_derive_seed, gaussian_ensemble as core_gaussian_ensemble, success_rate_experiment};
use cbs_core::engine::TrajectoryRecord;
use cbs_core::gaussian::{self, GaussianState, GaussianTarget};
use cbs_core::objectives::ObjectiveParams;
use cbs_core::{CbsError, Ensemble, Mode, Objective};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: CbsError) -> PyErr {
    match e {
        CbsError::ConfigInvalid(_)
        | CbsError::DimensionMismatch { .. }
        | CbsError::InvalidEnsemble(_)
        | CbsError::NotSpd
        | CbsError::NotPsd { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows must all have the same length"));
    }
    Ok(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn ensemble(particles: &[Vec<f64>]) -> PyResult<Ensemble> {
    Ensemble::from_rows(particles).map_err(to_py)
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(to_py)
}

fn gaussian_pair(m: Vec<f64>, c: &[Vec<f64>], a: Vec<f64>, cov: &[Vec<f64>]) -> PyResult<(GaussianState, GaussianTarget)> {
    let state = GaussianState::new(DVector::from_vec(m), matrix(c)?).map_err(to_py)?;
    let target = GaussianTarget::new(DVector::from_vec(a), matrix(cov)?).map_err(to_py)?;
    Ok((state, target))
}

type Moments = (Vec<f64>, Vec<Vec<f64>>);

/// `(iteration, mean, cov_frobenius, beta)`.
type TrajectoryRow = (usize, Vec<f64>, f64, f64);

fn moments(m: &DVector<f64>, c: &DMatrix<f64>) -> Moments {
    (m.iter().copied().collect(), rows(c))
}

/// Run parameters; `mode` is "sampling" or "optimization".
#[pyclass(name = "CbsConfig", get_all, set_all, from_py_object)]
#[derive(Clone, Debug)]
struct PyCbsConfig {
    alpha: f64,
    beta: f64,
    mode: String,
    adaptive_beta: bool,
    eta: f64,
    beta_max: f64,
    max_iters: usize,
    cov_frobenius_tol: f64,
    seed: u64,
    record_trajectory: bool,
}

impl PyCbsConfig {
    fn to_core(&self) -> PyResult<cbs_core::CbsConfig> {
        Ok(cbs_core::CbsConfig {
            alpha: self.alpha,
            beta: self.beta,
            mode: parse_mode(&self.mode)?,
            adaptive_beta: self.adaptive_beta,
            eta: self.eta,
            beta_max: self.beta_max,
            max_iters: self.max_iters,
            cov_frobenius_tol: self.cov_frobenius_tol,
            seed: self.seed,
            record_trajectory: self.record_trajectory,
            ..Default::default()
        })
    }
}

#[pymethods]
impl PyCbsConfig {
    #[new]
    #[pyo3(signature = (
        alpha = 0.0,
        beta = 1.0,
        mode = "optimization",
        adaptive_beta = false,
        eta = cbs_core::beta::DEFAULT_ETA,
        beta_max = cbs_core::beta::DEFAULT_BETA_MAX,
        max_iters = cbs_core::engine::DEFAULT_MAX_ITERS,
        cov_frobenius_tol = cbs_core::engine::DEFAULT_COV_FROBENIUS_TOL,
        seed = 0,
        record_trajectory = false,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        alpha: f64,
        beta: f64,
        mode: &str,
        adaptive_beta: bool,
        eta: f64,
        beta_max: f64,
        max_iters: usize,
        cov_frobenius_tol: f64,
        seed: u64,
        record_trajectory: bool,
    ) -> PyResult<Self> {
        let mode = parse_mode(mode)?.to_string();
        Ok(Self {
            alpha,
            beta,
            mode,
            adaptive_beta,
            eta,
            beta_max,
            max_iters,
            cov_frobenius_tol,
            seed,
            record_trajectory,
        })
    }

    /// Raises `ValueError` if the config is unusable with `j` particles.
    fn validate(&self, j: usize) -> PyResult<()> {
        self.to_core()?.validate(j).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("{self:?}").replacen("PyCbsConfig", "CbsConfig", 1)
    }
}

/// Wraps a Python callable `f(theta: list[float]) -> float`.
struct CallableObjective {
    func: Py<PyAny>,
    dim: usize,
    name: String,
    error: Arc<Mutex<Option<PyErr>>>,
}

impl Objective for CallableObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        Python::attach(|py| {
            let value = self
                .func
                .bind(py)
                .call1((theta.to_vec(),))
                .and_then(|v| v.extract::<f64>());
            match value {
                Ok(v) if !v.is_nan() => v,
                Ok(_) => f64::INFINITY,
                Err(e) => {
                    let mut slot = self.error.lock().unwrap_or_else(|p| p.into_inner());
                    slot.get_or_insert(e);
                    f64::INFINITY
                }
            }
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[pyclass(name = "Objective", frozen)]
struct PyObjective {
    inner: Arc<dyn Objective>,
    error: Option<Arc<Mutex<Option<PyErr>>>>,
}

impl PyObjective {
    /// Re-raises the first exception thrown by a Python callable.
    fn take_error(&self) -> PyResult<()> {
        match self.error.as_ref().and_then(|e| e.lock().unwrap_or_else(|p| p.into_inner()).take()) {
            Some(err) => Err(err),
            None => Ok(()),
        }
    }
}

#[pymethods]
impl PyObjective {
    /// One of "quadratic", "ackley", "rastrigin", "elliptic-2d", "logcosh".
    #[staticmethod]
    #[pyo3(signature = (name, d = 2, b = 0.0, center = None, covariance = None))]
    fn builtin(name: &str, d: usize, b: f64, center: Option<Vec<f64>>, covariance: Option<Vec<Vec<f64>>>) -> PyResult<Self> {
        let params = ObjectiveParams {
            d,
            b,
            center,
            covariance: covariance.map(|c| c.concat()),
        };
        let inner = cbs_core::objective_by_name(name, &params).map_err(to_py)?;
        Ok(Self { inner, error: None })
    }

    #[staticmethod]
    #[pyo3(signature = (func, d, name = "python"))]
    fn from_callable(func: Py<PyAny>, d: usize, name: &str) -> PyResult<Self> {
        if d == 0 {
            return Err(PyValueError::new_err("dimension d must be >= 1"));
        }
        let error = Arc::new(Mutex::new(None));
        let inner = Arc::new(CallableObjective {
            func,
            dim: d,
            name: name.to_string(),
            error: error.clone(),
        });
        Ok(Self { inner, error: Some(error) })
    }

    fn __call__(&self, theta: Vec<f64>) -> PyResult<f64> {
        if theta.len() != self.inner.dim() {
            return Err(to_py(CbsError::DimensionMismatch {
                expected: self.inner.dim(),
                got: theta.len(),
            }));
        }
        let v = self.inner.evaluate(&theta);
        self.take_error()?;
        Ok(v)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name().to_string()
    }

    fn minimizer(&self) -> Option<Vec<f64>> {
        self.inner.minimizer()
    }

    fn __repr__(&self) -> String {
        format!("Objective(name={:?}, dim={})", self.inner.name(), self.inner.dim())
    }
}

#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    ensemble: Ensemble,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    stop_reason: String,
    #[pyo3(get)]
    final_beta: f64,
    #[pyo3(get)]
    beta_clamped_iterations: usize,
    records: Option<Vec<TrajectoryRecord>>,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn final_ensemble(&self) -> Vec<Vec<f64>> {
        self.ensemble.rows()
    }

    /// `(iteration, mean, cov_frobenius, beta)` per iteration, if recorded.
    #[getter]
    fn trajectory(&self) -> Option<Vec<TrajectoryRow>> {
        self.records.as_ref().map(|t| {
            t.iter()
                .map(|r| (r.iteration, r.mean.clone(), r.cov_frobenius, r.beta))
                .collect()
        })
    }

    fn mean(&self) -> Vec<f64> {
        self.ensemble.mean().iter().copied().collect()
    }

    fn covariance(&self) -> Vec<Vec<f64>> {
        rows(&self.ensemble.covariance())
    }

    fn __repr__(&self) -> String {
        format!(
            "RunResult(iterations={}, stop_reason={:?}, final_beta={})",
            self.iterations, self.stop_reason, self.final_beta
        )
    }
}

/// Runs CBS from `initial` (J rows of length d) until collapse or `max_iters`.
#[pyfunction]
fn run(py: Python<'_>, initial: Vec<Vec<f64>>, objective: &PyObjective, config: &PyCbsConfig) -> PyResult<PyRunResult> {
    let init = ensemble(&initial)?;
    let config = config.to_core()?;
    let inner = objective.inner.clone();
    let result = py.detach(move || cbs_core::run(&init, inner.as_ref(), &config));
    objective.take_error()?;
    let r = result.map_err(to_py)?;
    Ok(PyRunResult {
        iterations: r.iterations,
        stop_reason: format!("{:?}", r.stop_reason),
        final_beta: r.final_beta,
        beta_clamped_iterations: r.beta_clamped_iterations,
        records: r.trajectory,
        ensemble: r.final_ensemble,
    })
}

/// One CBS update with externally supplied standard normal `noise` (J x d).
#[pyfunction]
#[pyo3(name = "cbs_step")]
fn py_cbs_step(
    particles: Vec<Vec<f64>>,
    f_values: Vec<f64>,
    alpha: f64,
    beta: f64,
    lam: f64,
    noise: Vec<Vec<f64>>,
) -> PyResult<Vec<Vec<f64>>> {
    let next = cbs_core::cbs_step(&ensemble(&particles)?, &f_values, alpha, beta, lam, &matrix(&noise)?).map_err(to_py)?;
    Ok(next.rows())
}

/// Weighted mean and covariance under weights `exp(-beta f)`.
#[pyfunction]
fn weighted_moments(particles: Vec<Vec<f64>>, f_values: Vec<f64>, beta: f64) -> PyResult<Moments> {
    let e = ensemble(&particles)?;
    let w = cbs_core::log_weights(&e, &f_values, beta).map_err(to_py)?;
    let m = cbs_core::weighted_moments(&e, &w).map_err(to_py)?;
    Ok(moments(&m.mean, &m.covariance))
}

#[pyfunction]
fn effective_sample_size(f_values: Vec<f64>, beta: f64) -> PyResult<f64> {
    cbs_core::effective_sample_size(&f_values, beta).map_err(to_py)
}

/// Returns `(beta, achieved_ess, clamped)`.
#[pyfunction]
#[pyo3(signature = (f_values, eta = cbs_core::beta::DEFAULT_ETA, beta_max = cbs_core::beta::DEFAULT_BETA_MAX))]
fn solve_beta(f_values: Vec<f64>, eta: f64, beta_max: f64) -> PyResult<(f64, f64, bool)> {
    let r = cbs_core::solve_beta(&f_values, eta, beta_max).map_err(to_py)?;
    Ok((r.beta, r.j_eff_achieved, r.clamped))
}

#[pyfunction]
fn sym_sqrt(c: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&cbs_core::sym_sqrt(&matrix(&c)?).map_err(to_py)?))
}

/// Moments of `N(m, C)` reweighted by `exp(-beta f)` for the target `N(a, A)`.
#[pyfunction]
fn gaussian_weighted_moments(m: Vec<f64>, c: Vec<Vec<f64>>, a: Vec<f64>, cov: Vec<Vec<f64>>, beta: f64) -> PyResult<Moments> {
    let (state, target) = gaussian_pair(m, &c, a, &cov)?;
    let (mb, cb) = gaussian::gaussian_weighted_moments(&state, &target, beta).map_err(to_py)?;
    Ok(moments(&mb, &cb))
}

#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn discrete_moment_step(
    m: Vec<f64>,
    c: Vec<Vec<f64>>,
    a: Vec<f64>,
    cov: Vec<Vec<f64>>,
    alpha: f64,
    lam: f64,
    beta: f64,
) -> PyResult<Moments> {
    let (state, target) = gaussian_pair(m, &c, a, &cov)?;
    let next = gaussian::discrete_moment_step(&state, alpha, lam, beta, &target).map_err(to_py)?;
    Ok(moments(&next.m, &next.c))
}

#[pyfunction]
#[pyo3(signature = (m, c, a, cov, lam, beta, t_end, dt = gaussian::DEFAULT_DT))]
#[allow(clippy::too_many_arguments)]
fn continuous_moment_flow(
    m: Vec<f64>,
    c: Vec<Vec<f64>>,
    a: Vec<f64>,
    cov: Vec<Vec<f64>>,
    lam: f64,
    beta: f64,
    t_end: f64,
    dt: f64,
) -> PyResult<Moments> {
    let (state, target) = gaussian_pair(m, &c, a, &cov)?;
    let end = gaussian::continuous_moment_flow(&state, &target, lam, beta, t_end, dt).map_err(to_py)?;
    Ok(moments(&end.m, &end.c))
}

#[pyclass(name = "RateEnvelope", frozen)]
struct PyRateEnvelope(gaussian::RateEnvelope);

#[pymethods]
impl PyRateEnvelope {
    /// Mean decay factor after `x` steps (or time `x` when `alpha = 1`).
    fn mean_rate(&self, x: f64) -> f64 {
        self.0.mean_rate(x)
    }

    fn cov_rate(&self, x: f64) -> f64 {
        self.0.cov_rate(x)
    }

    fn mean_bound(&self, x: f64) -> f64 {
        self.0.mean_bound(x)
    }

    fn cov_bound(&self, x: f64) -> f64 {
        self.0.cov_bound(x)
    }

    fn __repr__(&self) -> String {
        let e = &self.0;
        format!("RateEnvelope(mode={:?}, alpha={}, beta={}, k0={})", e.mode.to_string(), e.alpha, e.beta, e.k0)
    }
}

/// `alpha = 1` selects the continuous-time envelope.
#[pyfunction]
fn rate_envelope(mode: &str, alpha: f64, beta: f64, k0: f64) -> PyResult<PyRateEnvelope> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(PyValueError::new_err(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    Ok(PyRateEnvelope(gaussian::rate_envelope(parse_mode(mode)?, alpha, beta, k0)))
}

/// `lambda` implied by the mode at inverse temperature `beta`.
#[pyfunction]
fn mode_lambda(mode: &str, beta: f64) -> PyResult<f64> {
    Ok(parse_mode(mode)?.lambda(beta))
}

/// `particles` draws from `N(mean, std^2 I)`, reproducible per seed.
#[pyfunction]
fn gaussian_ensemble(seed: u64, particles: usize, mean: Vec<f64>, std: f64) -> PyResult<Vec<Vec<f64>>> {
    Ok(core_gaussian_ensemble(seed, particles, &mean, std).map_err(to_py)?.rows())
}

#[pyfunction]
fn derive_seed(master: u64, index: u64) -> u64 {
    core_derive_seed(master, index)
}

/// Repeated runs from `N(0, init_std^2 I)`; returns
/// `(success_rate, mean_iterations, mean_final_error)`.
#[pyfunction]
#[pyo3(signature = (objective, config, particles, n_runs, init_std = 3f64.sqrt()))]
fn success_rate(
    py: Python<'_>,
    objective: &PyObjective,
    config: &PyCbsConfig,
    particles: usize,
    n_runs: usize,
    init_std: f64,
) -> PyResult<(f64, f64, Option<f64>)> {
    let config = config.to_core()?;
    let inner = objective.inner.clone();
    let report = py.detach(move || success_rate_experiment(inner.as_ref(), &config, particles, n_runs, init_std));
    objective.take_error()?;
    let r = report.map_err(to_py)?;
    Ok((r.success_rate, r.mean_iterations, r.mean_final_error))
}

#[pymodule]
pub fn cbs_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCbsConfig>()?;
    m.add_class::<PyObjective>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyRateEnvelope>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(py_cbs_step, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_moments, m)?)?;
    m.add_function(wrap_pyfunction!(effective_sample_size, m)?)?;
    m.add_function(wrap_pyfunction!(solve_beta, m)?)?;
    m.add_function(wrap_pyfunction!(sym_sqrt, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_weighted_moments, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_moment_step, m)?)?;
    m.add_function(wrap_pyfunction!(continuous_moment_flow, m)?)?;
    m.add_function(wrap_pyfunction!(rate_envelope, m)?)?;
    m.add_function(wrap_pyfunction!(mode_lambda, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_ensemble, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(success_rate, m)?)?;
    Ok(())
}
