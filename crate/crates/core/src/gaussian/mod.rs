//! Exact mean-field dynamics for Gaussian targets `N(a, A)` with potential
//! `f(theta) = 1/2 |theta - a|_A^2`.
//!
//! Starting from a Gaussian law, the CBS iteration stays Gaussian and is fully
//! described by its mean and covariance. This module evaluates those moment
//! maps in closed form, integrates the continuous-time moment ODEs, and
//! provides the rate envelopes and the 1D quadrature lab used to check the
//! non-Gaussian steady state.
//!
//! All matrix expressions go through Cholesky solves with `A + beta C`, and
//! covariances are re-symmetrized after every step.

mod quadrature;
mod rates;
mod scalar;
pub mod sweep;

pub use quadrature::{
    gauss_legendre, laplace_fixed_point, quadrature_weighted_moments_1d, LaplaceFixedPoint,
    QUADRATURE_REL_TOL,
};
pub use rates::{rate_envelope, AlphaCase, RateEnvelope};
pub use scalar::{
    continuous_u_bounds, continuous_v_bounds, discrete_u_bounds, discrete_v_bounds, scalar_flow,
    scalar_recursion, ScalarPoint,
};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{CbsError, Result};

pub const DEFAULT_DT: f64 = 1e-3;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spd_cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if !m.is_square() || m.iter().any(|x| !x.is_finite()) {
        return None;
    }
    Cholesky::new(symmetrize(m))
}

/// Target `N(a, A)`.
#[derive(Debug, Clone)]
pub struct GaussianTarget {
    a: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianTarget {
    pub fn new(a: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != a.len() || !cov.is_square() {
            return Err(CbsError::DimensionMismatch {
                expected: a.len(),
                got: cov.nrows(),
            });
        }
        if (&cov - cov.transpose()).amax() > 1e-12 * (1.0 + cov.amax()) {
            return Err(CbsError::NotSpd);
        }
        let chol = spd_cholesky(&cov).ok_or(CbsError::NotSpd)?;
        Ok(Self {
            a,
            cov: symmetrize(&cov),
            chol,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.a
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `f(theta) = 1/2 |theta - a|_A^2`.
    pub fn potential(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.vec_norm(&(theta - &self.a)).powi(2)
    }

    /// `|v|_A = (v^T A^{-1} v)^{1/2}`.
    pub fn vec_norm(&self, v: &DVector<f64>) -> f64 {
        let mut y = v.clone();
        self.chol.l_dirty().solve_lower_triangular_mut(&mut y);
        y.norm()
    }

    /// `L^{-1} M L^{-T}` for `A = L L^T`; orthogonally similar to `A^{-1/2} M A^{-1/2}`.
    fn whiten(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let l = self.chol.l();
        let mut x = m.clone();
        l.solve_lower_triangular_mut(&mut x);
        let mut y = x.transpose();
        l.solve_lower_triangular_mut(&mut y);
        symmetrize(&y)
    }

    /// `||M||_A = ||A^{-1/2} M A^{-1/2}||` (operator norm) for symmetric `M`.
    pub fn mat_norm(&self, m: &DMatrix<f64>) -> f64 {
        SymmetricEigen::new(self.whiten(m)).eigenvalues.amax()
    }

    /// `k0 = ||A^{1/2} C0^{-1} A^{1/2}||`.
    pub fn k0(&self, c0: &DMatrix<f64>) -> f64 {
        let min = SymmetricEigen::new(self.whiten(c0)).eigenvalues.min();
        1.0 / min
    }

    /// `C_inf = (1 - lambda)/(lambda beta) A`; zero in optimization mode.
    pub fn steady_covariance(&self, lambda: f64, beta: f64) -> DMatrix<f64> {
        &self.cov * ((1.0 - lambda) / (lambda * beta))
    }

    fn solve_shifted(&self, c: &DMatrix<f64>, beta: f64) -> Result<Cholesky<f64, Dyn>> {
        spd_cholesky(&(&self.cov + c * beta)).ok_or(CbsError::SingularMatrix)
    }

    /// `A (A + beta C)^{-1} v`.
    fn pull(&self, s: &Cholesky<f64, Dyn>, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.cov * s.solve(v)
    }
}

/// Moments `(m, C)` of a Gaussian law.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
}

impl GaussianState {
    pub fn new(m: DVector<f64>, c: DMatrix<f64>) -> Result<Self> {
        if c.nrows() != m.len() || !c.is_square() {
            return Err(CbsError::DimensionMismatch {
                expected: m.len(),
                got: c.nrows(),
            });
        }
        if (&c - c.transpose()).amax() > 1e-12 * (1.0 + c.amax()) || spd_cholesky(&c).is_none() {
            return Err(CbsError::NotSpd);
        }
        Ok(Self { m, c: symmetrize(&c) })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }
}

/// Offsets `(m - a, C - C_inf)` from the steady state. Tracking these
/// directly keeps full relative precision when the offsets are far below
/// the rounding level of `m` and `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentDeviation {
    pub dm: DVector<f64>,
    pub dc: DMatrix<f64>,
}

impl MomentDeviation {
    pub fn from_state(state: &GaussianState, target: &GaussianTarget, c_inf: &DMatrix<f64>) -> Self {
        Self {
            dm: &state.m - target.mean(),
            dc: &state.c - c_inf,
        }
    }

    pub fn to_state(&self, target: &GaussianTarget, c_inf: &DMatrix<f64>) -> GaussianState {
        GaussianState {
            m: target.mean() + &self.dm,
            c: symmetrize(&(c_inf + &self.dc)),
        }
    }
}

fn check_dims(state: &GaussianState, target: &GaussianTarget) -> Result<()> {
    if state.dim() != target.dim() {
        return Err(CbsError::DimensionMismatch {
            expected: target.dim(),
            got: state.dim(),
        });
    }
    Ok(())
}

/// Mean and covariance of `L_beta N(m, C)`:
/// `C_beta = (C^{-1} + beta A^{-1})^{-1} = C (A + beta C)^{-1} A` and
/// `m_beta = C_beta (beta A^{-1} a + C^{-1} m) = a + A (A + beta C)^{-1} (m - a)`.
pub fn gaussian_weighted_moments(
    state: &GaussianState,
    target: &GaussianTarget,
    beta: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_dims(state, target)?;
    let s = target.solve_shifted(&state.c, beta)?;
    let c_beta = symmetrize(&(&state.c * s.solve(target.covariance())));
    let dm = DMatrix::from_column_slice(state.dim(), 1, (&state.m - target.mean()).as_slice());
    let m_beta = target.mean() + target.pull(&s, &dm).column(0);
    Ok((m_beta, c_beta))
}

/// One step of the Gaussian moment recursion
/// `m' = alpha m + (1 - alpha) m_beta`, `C' = alpha^2 C + (1 - alpha^2)/lambda C_beta`.
pub fn discrete_moment_step(
    state: &GaussianState,
    alpha: f64,
    lambda: f64,
    beta: f64,
    target: &GaussianTarget,
) -> Result<GaussianState> {
    let (m_beta, c_beta) = gaussian_weighted_moments(state, target, beta)?;
    let m = &state.m * alpha + m_beta * (1.0 - alpha);
    let c = symmetrize(&(&state.c * (alpha * alpha) + c_beta * ((1.0 - alpha * alpha) / lambda)));
    Ok(GaussianState { m, c })
}

/// [`discrete_moment_step`] written on the offsets from `(a, C_inf)`:
/// `dm' = [alpha I + (1 - alpha) A (A + beta C)^{-1}] dm` and
/// `dC' = A (A + beta C)^{-1} (I + alpha^2 beta C A^{-1}) dC`.
pub fn discrete_deviation_step(
    dev: &MomentDeviation,
    alpha: f64,
    lambda: f64,
    beta: f64,
    target: &GaussianTarget,
) -> Result<MomentDeviation> {
    let c_inf = target.steady_covariance(lambda, beta);
    let c = symmetrize(&(&c_inf + &dev.dc));
    let s = target.solve_shifted(&c, beta)?;
    let d = dev.dm.len();
    let dm_mat = DMatrix::from_column_slice(d, 1, dev.dm.as_slice());
    let pulled = target.pull(&s, &dm_mat);
    let dm = &dev.dm * alpha + pulled.column(0) * (1.0 - alpha);
    let a_inv_dc = target.chol.solve(&dev.dc);
    let inner = &dev.dc + &c * a_inv_dc * (alpha * alpha * beta);
    let dc = symmetrize(&target.pull(&s, &inner));
    Ok(MomentDeviation { dm, dc })
}

/// Iterates [`discrete_deviation_step`]; entry `n` holds the offsets after `n` steps.
pub fn discrete_deviation_trajectory(
    state0: &GaussianState,
    target: &GaussianTarget,
    alpha: f64,
    lambda: f64,
    beta: f64,
    n_steps: usize,
) -> Result<Vec<MomentDeviation>> {
    check_dims(state0, target)?;
    let c_inf = target.steady_covariance(lambda, beta);
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(MomentDeviation::from_state(state0, target, &c_inf));
    for n in 0..n_steps {
        let next = discrete_deviation_step(&out[n], alpha, lambda, beta, target)?;
        out.push(next);
    }
    Ok(out)
}

/// Right-hand side of the moment ODEs on the offsets:
/// `d(dm)/dt = -beta C (A + beta C)^{-1} dm`, `d(dC)/dt = -2 beta C (A + beta C)^{-1} dC`.
fn flow_rhs(
    dev: &MomentDeviation,
    c_inf: &DMatrix<f64>,
    beta: f64,
    target: &GaussianTarget,
) -> Option<MomentDeviation> {
    let c = symmetrize(&(c_inf + &dev.dc));
    let s = spd_cholesky(&(target.covariance() + &c * beta))?;
    // C (A + beta C)^{-1} = ((A + beta C)^{-1} C)^T
    let k = s.solve(&c).transpose() * beta;
    Some(MomentDeviation {
        dm: -(&k * &dev.dm),
        dc: -(&k * &dev.dc) * 2.0,
    })
}

fn axpy(base: &MomentDeviation, h: f64, k: &MomentDeviation) -> MomentDeviation {
    MomentDeviation {
        dm: &base.dm + &k.dm * h,
        dc: &base.dc + &k.dc * h,
    }
}

/// Fixed-step classical RK4 on the moment ODEs, recording every
/// `record_every`-th step (and always the last one) as `(t, offsets)`.
pub fn continuous_flow_trajectory(
    state0: &GaussianState,
    target: &GaussianTarget,
    lambda: f64,
    beta: f64,
    t_end: f64,
    dt: f64,
    record_every: usize,
) -> Result<Vec<(f64, MomentDeviation)>> {
    check_dims(state0, target)?;
    if !(dt > 0.0) || !(t_end > 0.0) || dt > t_end {
        return Err(CbsError::ConfigInvalid(format!(
            "need 0 < dt <= t_end, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let record_every = record_every.max(1);
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let h = t_end / steps as f64;
    let c_inf = target.steady_covariance(lambda, beta);
    let mut dev = MomentDeviation::from_state(state0, target, &c_inf);
    let mut out = vec![(0.0, dev.clone())];
    for step in 1..=steps {
        let t = (step - 1) as f64 * h;
        let reject = || CbsError::StepRejected { t };
        let k1 = flow_rhs(&dev, &c_inf, beta, target).ok_or_else(reject)?;
        let k2 = flow_rhs(&axpy(&dev, 0.5 * h, &k1), &c_inf, beta, target).ok_or_else(reject)?;
        let k3 = flow_rhs(&axpy(&dev, 0.5 * h, &k2), &c_inf, beta, target).ok_or_else(reject)?;
        let k4 = flow_rhs(&axpy(&dev, h, &k3), &c_inf, beta, target).ok_or_else(reject)?;
        let dm = &dev.dm + (&k1.dm + &k2.dm * 2.0 + &k3.dm * 2.0 + &k4.dm) * (h / 6.0);
        let dc = &dev.dc + (&k1.dc + &k2.dc * 2.0 + &k3.dc * 2.0 + &k4.dc) * (h / 6.0);
        dev = MomentDeviation {
            dm,
            dc: symmetrize(&dc),
        };
        if spd_cholesky(&(&c_inf + &dev.dc)).is_none() {
            return Err(CbsError::StepRejected { t: step as f64 * h });
        }
        if step % record_every == 0 || step == steps {
            out.push((step as f64 * h, dev.clone()));
        }
    }
    Ok(out)
}

/// Moments at `t_end` of the continuous-time moment ODEs
/// `m' = -beta C (A + beta C)^{-1} (m - a)`,
/// `C' = -2 beta C (A + beta C)^{-1} (C - (1 - lambda)/(beta lambda) A)`.
pub fn continuous_moment_flow(
    state0: &GaussianState,
    target: &GaussianTarget,
    lambda: f64,
    beta: f64,
    t_end: f64,
    dt: f64,
) -> Result<GaussianState> {
    let traj = continuous_flow_trajectory(state0, target, lambda, beta, t_end, dt, usize::MAX)?;
    let c_inf = target.steady_covariance(lambda, beta);
    Ok(traj.last().expect("non-empty").1.to_state(target, &c_inf))
}

/// `(C^{-1} + beta H)^{-1}`: the upper (`H = L`) and lower (`H = U`) bounds on
/// the weighted covariance for potentials with `L <= D^2 f <= U`.
pub fn covariance_bound(c: &DMatrix<f64>, beta: f64, hessian_bound: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let c_inv = c.clone().try_inverse().ok_or(CbsError::SingularMatrix)?;
    let sum = c_inv + hessian_bound * beta;
    Ok(symmetrize(&sum.try_inverse().ok_or(CbsError::SingularMatrix)?))
}
