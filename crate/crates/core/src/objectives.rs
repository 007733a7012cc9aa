//! Objective functions `theta -> f(theta)` and the built-in test targets.

use std::f64::consts::{E, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{CbsError, Result};

/// A deterministic objective on `R^d`. `+inf` marks a failed evaluation.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, theta: &[f64]) -> f64;

    /// Known global minimizer, used only for benchmarking.
    fn minimizer(&self) -> Option<Vec<f64>> {
        None
    }

    fn name(&self) -> &str;
}

impl<T: Objective + ?Sized> Objective for Box<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        (**self).evaluate(theta)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        (**self).minimizer()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<T: Objective + ?Sized> Objective for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn evaluate(&self, theta: &[f64]) -> f64 {
        (**self).evaluate(theta)
    }
    fn minimizer(&self) -> Option<Vec<f64>> {
        (**self).minimizer()
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() || (m - m.transpose()).amax() > 1e-12 * (1.0 + m.amax()) {
        return Err(CbsError::NotSpd);
    }
    Cholesky::new(m.clone()).ok_or(CbsError::NotSpd)
}

/// `1/2 |theta - a|_A^2 = 1/2 (theta - a)^T A^{-1} (theta - a)`.
#[derive(Clone)]
pub struct Quadratic {
    center: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl Quadratic {
    pub fn new(center: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != center.len() {
            return Err(CbsError::DimensionMismatch {
                expected: center.len(),
                got: covariance.nrows(),
            });
        }
        Ok(Self {
            center,
            factor: spd_factor(covariance)?,
        })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }
}

impl fmt::Debug for Quadratic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Quadratic")
            .field("center", &self.center)
            .finish_non_exhaustive()
    }
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        let r = DVector::from_column_slice(theta) - &self.center;
        // |L^{-1} r|^2 with A = L L^T
        let mut y = r;
        self.factor.l_dirty().solve_lower_triangular_mut(&mut y);
        0.5 * y.norm_squared()
    }

    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(self.center.iter().copied().collect())
    }

    fn name(&self) -> &str {
        "quadratic"
    }
}

pub fn quadratic(center: DVector<f64>, covariance: &DMatrix<f64>) -> Result<Quadratic> {
    Quadratic::new(center, covariance)
}

/// Translated Ackley function, minimized at `(b, ..., b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ackley {
    pub d: usize,
    pub b: f64,
}

impl Objective for Ackley {
    fn dim(&self) -> usize {
        self.d
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        let d = self.d as f64;
        let (sq, cos) = x.iter().fold((0.0, 0.0), |(sq, cos), &xi| {
            let y = xi - self.b;
            (sq + y * y, cos + (2.0 * PI * y).cos())
        });
        -20.0 * (-0.2 * (sq / d).sqrt()).exp() - (cos / d).exp() + E + 20.0
    }

    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(vec![self.b; self.d])
    }

    fn name(&self) -> &str {
        "ackley"
    }
}

pub fn ackley(d: usize, b: f64) -> Ackley {
    Ackley { d, b }
}

/// Translated Rastrigin function, minimized at `(b, ..., b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rastrigin {
    pub d: usize,
    pub b: f64,
}

impl Objective for Rastrigin {
    fn dim(&self) -> usize {
        self.d
    }

    fn evaluate(&self, x: &[f64]) -> f64 {
        x.iter()
            .map(|&xi| {
                let y = xi - self.b;
                y * y - 10.0 * (2.0 * PI * y).cos() + 10.0
            })
            .sum()
    }

    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(vec![self.b; self.d])
    }

    fn name(&self) -> &str {
        "rastrigin"
    }
}

pub fn rastrigin(d: usize, b: f64) -> Rastrigin {
    Rastrigin { d, b }
}

/// Forward model `G: R^d -> R^K`. `None` (or a non-finite output) is a failure.
pub type ForwardMap = Arc<dyn Fn(&[f64]) -> Option<Vec<f64>> + Send + Sync>;

/// Bayesian inverse problem `y = G(theta) + eta`, `eta ~ N(0, Gamma)`,
/// with prior `N(0, Sigma)`.
#[derive(Clone)]
pub struct BayesSetup {
    pub forward: ForwardMap,
    pub data: DVector<f64>,
    pub noise_cov: DMatrix<f64>,
    pub prior_cov: DMatrix<f64>,
}

impl fmt::Debug for BayesSetup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BayesSetup")
            .field("data", &self.data)
            .field("noise_cov", &self.noise_cov)
            .field("prior_cov", &self.prior_cov)
            .finish_non_exhaustive()
    }
}

/// Posterior potential `1/2 |y - G(theta)|_Gamma^2 + 1/2 |theta|_Sigma^2`.
#[derive(Clone)]
pub struct BayesPotential {
    forward: ForwardMap,
    data: DVector<f64>,
    noise: Cholesky<f64, Dyn>,
    prior: Cholesky<f64, Dyn>,
    name: String,
}

impl BayesPotential {
    pub fn new(setup: BayesSetup) -> Result<Self> {
        if setup.noise_cov.nrows() != setup.data.len() {
            return Err(CbsError::DimensionMismatch {
                expected: setup.data.len(),
                got: setup.noise_cov.nrows(),
            });
        }
        Ok(Self {
            noise: spd_factor(&setup.noise_cov)?,
            prior: spd_factor(&setup.prior_cov)?,
            forward: setup.forward,
            data: setup.data,
            name: "bayes".into(),
        })
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.into();
        self
    }

    /// Data misfit `1/2 |y - G(theta)|_Gamma^2`.
    pub fn misfit(&self, theta: &[f64]) -> f64 {
        let Some(g) = (self.forward)(theta) else {
            return f64::INFINITY;
        };
        if g.len() != self.data.len() || g.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let mut r = &self.data - DVector::from_vec(g);
        self.noise.l_dirty().solve_lower_triangular_mut(&mut r);
        0.5 * r.norm_squared()
    }
}

impl fmt::Debug for BayesPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BayesPotential")
            .field("name", &self.name)
            .field("data", &self.data)
            .finish_non_exhaustive()
    }
}

impl Objective for BayesPotential {
    fn dim(&self) -> usize {
        self.prior.l_dirty().nrows()
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        if theta.len() != self.dim() {
            return f64::INFINITY;
        }
        let misfit = self.misfit(theta);
        if !misfit.is_finite() {
            return f64::INFINITY;
        }
        let mut t = DVector::from_column_slice(theta);
        self.prior.l_dirty().solve_lower_triangular_mut(&mut t);
        let value = misfit + 0.5 * t.norm_squared();
        if value.is_nan() {
            f64::INFINITY
        } else {
            value
        }
    }

    fn name(&self) -> &str {
        &self.name
    }
}

pub fn bayes_potential(setup: BayesSetup) -> Result<BayesPotential> {
    BayesPotential::new(setup)
}

/// Observation points of the elliptic boundary-value problem.
pub const ELLIPTIC_OBS_POINTS: [f64; 2] = [0.25, 0.75];
pub const ELLIPTIC_PRIOR_STD: f64 = 10.0;
pub const ELLIPTIC_NOISE_STD: f64 = 0.1;
pub const ELLIPTIC_DATA: [f64; 2] = [27.5, 79.7];

/// Explicit solution `p(x) = u2 x + e^{-u1}(-x^2/2 + x/2)` of
/// `-e^{u1} p'' = 1`, `p(0) = 0`, `p(1) = u2`, observed at `x = 0.25, 0.75`.
pub fn elliptic_forward(u1: f64, u2: f64) -> (f64, f64) {
    let p = |x: f64| elliptic_solution(u1, u2, x);
    (p(ELLIPTIC_OBS_POINTS[0]), p(ELLIPTIC_OBS_POINTS[1]))
}

pub fn elliptic_solution(u1: f64, u2: f64, x: f64) -> f64 {
    u2 * x + (-u1).exp() * (-0.5 * x * x + 0.5 * x)
}

/// The "elliptic-2d" posterior: prior `N(0, 10^2 I)`, noise `N(0, 0.1^2 I)`,
/// data `y = (27.5, 79.7)`.
pub fn elliptic_2d() -> BayesPotential {
    let setup = BayesSetup {
        forward: Arc::new(|u: &[f64]| {
            let (p1, p2) = elliptic_forward(u[0], u[1]);
            Some(vec![p1, p2])
        }),
        data: DVector::from_column_slice(&ELLIPTIC_DATA),
        noise_cov: DMatrix::identity(2, 2) * ELLIPTIC_NOISE_STD.powi(2),
        prior_cov: DMatrix::identity(2, 2) * ELLIPTIC_PRIOR_STD.powi(2),
    };
    BayesPotential::new(setup)
        .expect("preset covariances are SPD")
        .with_name("elliptic-2d")
}

/// `f(theta) = theta^2/2 + ln cosh(theta)` on `R`: strictly convex with
/// `1 <= f'' <= 2`, minimum at 0 with `f''(0) = 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LogCosh;

impl LogCosh {
    pub fn value(theta: f64) -> f64 {
        // ln cosh(t) = |t| + ln(1 + e^{-2|t|}) - ln 2, stable for large |t|
        let a = theta.abs();
        0.5 * theta * theta + a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
    }

    pub fn second_derivative(theta: f64) -> f64 {
        1.0 + 1.0 / theta.cosh().powi(2)
    }
}

impl Objective for LogCosh {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, theta: &[f64]) -> f64 {
        Self::value(theta[0])
    }

    fn minimizer(&self) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }

    fn name(&self) -> &str {
        "logcosh"
    }
}

pub fn logcosh_target() -> LogCosh {
    LogCosh
}

/// Names accepted by [`objective_by_name`].
pub const REGISTRY: [&str; 5] = ["quadratic", "ackley", "rastrigin", "elliptic-2d", "logcosh"];

/// Parameters for building a registered objective by name.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParams {
    pub d: usize,
    pub b: f64,
    /// Center for "quadratic"; defaults to `(b, ..., b)`.
    pub center: Option<Vec<f64>>,
    /// Row-major covariance for "quadratic"; defaults to the identity.
    pub covariance: Option<Vec<f64>>,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            d: 2,
            b: 0.0,
            center: None,
            covariance: None,
        }
    }
}

/// Builds a registered objective.
pub fn objective_by_name(name: &str, params: &ObjectiveParams) -> Result<Arc<dyn Objective>> {
    if params.d == 0 {
        return Err(CbsError::ConfigInvalid("dimension d must be >= 1".into()));
    }
    Ok(match name {
        "quadratic" => {
            let d = params.d;
            let center = params.center.clone().unwrap_or_else(|| vec![params.b; d]);
            if center.len() != d {
                return Err(CbsError::DimensionMismatch {
                    expected: d,
                    got: center.len(),
                });
            }
            let cov = match &params.covariance {
                Some(v) if v.len() == d * d => DMatrix::from_row_slice(d, d, v),
                Some(v) => {
                    return Err(CbsError::DimensionMismatch {
                        expected: d * d,
                        got: v.len(),
                    })
                }
                None => DMatrix::identity(d, d),
            };
            Arc::new(Quadratic::new(DVector::from_vec(center), &cov)?)
        }
        "ackley" => Arc::new(ackley(params.d, params.b)),
        "rastrigin" => Arc::new(rastrigin(params.d, params.b)),
        "elliptic-2d" => Arc::new(elliptic_2d()),
        "logcosh" => Arc::new(LogCosh),
        other => {
            return Err(CbsError::ConfigInvalid(format!(
                "unknown objective '{other}', expected one of {}",
                REGISTRY.join(", ")
            )))
        }
    })
}
