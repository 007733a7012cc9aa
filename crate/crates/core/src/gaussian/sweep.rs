//! Parameter sweeps over the Gaussian moment dynamics: trajectories of the
//! normalized errors, envelope checks and fitted decay factors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    continuous_flow_trajectory, discrete_deviation_trajectory, rate_envelope, symmetrize,
    AlphaCase, GaussianState, GaussianTarget, MomentDeviation, RateEnvelope, DEFAULT_DT,
};
use crate::engine::Mode;
use crate::error::{CbsError, Result};

/// Random well-conditioned target and initial state in dimension `d`.
pub fn random_instance(d: usize, seed: u64) -> Result<(GaussianTarget, GaussianState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
    let spd = |b: DMatrix<f64>| symmetrize(&(&b * b.transpose() / d as f64 + DMatrix::identity(d, d) * 0.5));
    let a = gauss(d, 1).column(0).into_owned();
    let big_a = spd(gauss(d, d));
    let m0 = a.clone() + gauss(d, 1).column(0) * 2.0;
    let c0 = spd(gauss(d, d));
    Ok((GaussianTarget::new(a, big_a)?, GaussianState::new(m0, c0)?))
}

/// `max eig(C0^{-1/2} C C0^{-1/2})`: the smallest `r` with `C <= r C0`.
pub fn loewner_ratio(c: &DMatrix<f64>, c0: &DMatrix<f64>) -> Result<f64> {
    let chol = nalgebra::Cholesky::new(symmetrize(c0)).ok_or(CbsError::NotSpd)?;
    let l = chol.l();
    let mut x = c.clone();
    l.solve_lower_triangular_mut(&mut x);
    let mut y = x.transpose();
    l.solve_lower_triangular_mut(&mut y);
    Ok(SymmetricEigen::new(symmetrize(&y)).eigenvalues.max())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryCase {
    pub mode: Mode,
    /// `alpha = 1` selects the continuous-time flow.
    pub alpha: f64,
    pub beta: f64,
    pub d: usize,
    pub seed: u64,
}

impl TheoryCase {
    pub fn lambda(&self) -> f64 {
        self.mode.lambda(self.beta)
    }

    pub fn is_continuous(&self) -> bool {
        self.alpha >= 1.0
    }
}

/// Errors at one iteration (or time), normalized by their initial values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub x: f64,
    /// `|m - a|_A / |m0 - a|_A`.
    pub mean_ratio: f64,
    /// `||C - C_inf||_A / ||C0 - C_inf||_A`.
    pub cov_ratio: f64,
    /// Smallest `r` with `C <= r C0`.
    pub cov_loewner: f64,
}

/// Observed decay against the envelope over `[x1, x2]`: geometric factors per
/// unit step in sampling mode, algebraic exponents in optimization mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub x1: f64,
    pub x2: f64,
    pub fitted: f64,
    pub predicted: f64,
}

impl RateFit {
    pub fn abs_error(&self) -> f64 {
        (self.fitted - self.predicted).abs()
    }

    pub fn rel_error(&self) -> f64 {
        self.abs_error() / self.predicted.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryCaseResult {
    pub case: TheoryCase,
    pub k0: f64,
    pub envelope: RateEnvelope,
    pub points: Vec<TheoryPoint>,
    /// Largest observed/bound ratio over the trajectory; at most 1 when the bounds hold.
    pub worst_mean_bound: f64,
    pub worst_cov_bound: f64,
    pub mean_fit: RateFit,
    pub cov_fit: RateFit,
}

fn point(
    x: f64,
    dev: &MomentDeviation,
    dev0: &MomentDeviation,
    target: &GaussianTarget,
    c_inf: &DMatrix<f64>,
    c0: &DMatrix<f64>,
) -> Result<TheoryPoint> {
    let c = symmetrize(&(c_inf + &dev.dc));
    Ok(TheoryPoint {
        x,
        mean_ratio: target.vec_norm(&dev.dm) / target.vec_norm(&dev0.dm),
        cov_ratio: target.mat_norm(&dev.dc) / target.mat_norm(&dev0.dc),
        cov_loewner: loewner_ratio(&c, c0)?,
    })
}

fn interpolate(points: &[TheoryPoint], x: f64, pick: impl Fn(&TheoryPoint) -> f64) -> f64 {
    let i = points
        .iter()
        .position(|p| p.x >= x - 1e-12)
        .unwrap_or(points.len() - 1);
    pick(&points[i])
}

/// Exponent `p` of the model `K (x + x0)^{-p}` through three equally spaced samples.
/// Returns `None` when the samples are not consistent with a decelerating power law.
pub fn algebraic_exponent(xs: [f64; 3], es: [f64; 3]) -> Option<f64> {
    let r = (es[0] / es[1]).ln() / (es[1] / es[2]).ln();
    if !(r > 1.0) || !r.is_finite() {
        return None;
    }
    let g = |x0: f64| ((xs[1] + x0) / (xs[0] + x0)).ln() / ((xs[2] + x0) / (xs[1] + x0)).ln();
    // g decreases from +inf at x0 = -xs[0] towards 1 as x0 grows
    let mut lo = -xs[0] + 1e-12 * (1.0 + xs[0].abs());
    let mut hi = 1.0;
    while g(hi) > r {
        hi *= 2.0;
        if hi > 1e300 {
            return None;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x0 = 0.5 * (lo + hi);
    Some((es[0] / es[2]).ln() / ((xs[2] + x0) / (xs[0] + x0)).ln())
}

/// Sampling: geometric factor per unit step, `(e2/e1)^{1/(x2 - x1)}`, against
/// the envelope's factor. Optimization: the fitted algebraic exponent against
/// the exponent of the envelope.
fn fit(
    envelope: &RateEnvelope,
    points: &[TheoryPoint],
    (x1, x2): (f64, f64),
    observed: impl Fn(&TheoryPoint) -> f64,
    rate: impl Fn(f64) -> f64,
    exponent: f64,
) -> RateFit {
    let xm = 0.5 * (x1 + x2);
    let e = [x1, xm, x2].map(|x| interpolate(points, x, &observed));
    let (fitted, predicted) = match envelope.mode {
        Mode::Sampling => (
            (e[2] / e[0]).powf(1.0 / (x2 - x1)),
            (rate(x2) / rate(x1)).powf(1.0 / (x2 - x1)),
        ),
        Mode::Optimization => (
            algebraic_exponent([x1, xm, x2], e).unwrap_or(f64::NAN),
            exponent,
        ),
    };
    RateFit {
        x1,
        x2,
        fitted,
        predicted,
    }
}

/// Fit windows: iterations `[50, 100]` or times `[5, 10]`.
pub const DISCRETE_FIT_WINDOW: (f64, f64) = (50.0, 100.0);
pub const CONTINUOUS_FIT_WINDOW: (f64, f64) = (5.0, 10.0);

/// Runs the exact moment dynamics for `case` from `state0` and scores it
/// against the envelope: 100 iterations, or `t` in `[0, 10]` with step `dt`.
pub fn run_theory_case(
    case: TheoryCase,
    target: &GaussianTarget,
    state0: &GaussianState,
    dt: Option<f64>,
) -> Result<TheoryCaseResult> {
    let lambda = case.lambda();
    let c_inf = target.steady_covariance(lambda, case.beta);
    let k0 = target.k0(&state0.c);
    let envelope = rate_envelope(case.mode, case.alpha.min(1.0), case.beta, k0);
    let dev0 = MomentDeviation::from_state(state0, target, &c_inf);

    let (window, trajectory): ((f64, f64), Vec<(f64, MomentDeviation)>) = if case.is_continuous() {
        let dt = dt.unwrap_or(DEFAULT_DT);
        let every = ((0.05 / dt).round() as usize).max(1);
        let traj = continuous_flow_trajectory(state0, target, lambda, case.beta, 10.0, dt, every)?;
        (CONTINUOUS_FIT_WINDOW, traj)
    } else {
        let traj =
            discrete_deviation_trajectory(state0, target, case.alpha, lambda, case.beta, 100)?;
        (
            DISCRETE_FIT_WINDOW,
            traj.into_iter()
                .enumerate()
                .map(|(n, dev)| (n as f64, dev))
                .collect(),
        )
    };

    let points = trajectory
        .iter()
        .map(|(x, dev)| point(*x, dev, &dev0, target, &c_inf, &state0.c))
        .collect::<Result<Vec<_>>>()?;

    let cov_observed = |p: &TheoryPoint| match case.mode {
        Mode::Sampling => p.cov_ratio,
        Mode::Optimization => p.cov_loewner,
    };
    let mut worst_mean_bound: f64 = 0.0;
    let mut worst_cov_bound: f64 = 0.0;
    for p in &points {
        worst_mean_bound = worst_mean_bound.max(p.mean_ratio / envelope.mean_bound(p.x));
        worst_cov_bound = worst_cov_bound.max(cov_observed(p) / envelope.cov_bound(p.x));
    }
    let mean_exponent = match envelope.alpha_case {
        AlphaCase::Zero => 1.0,
        AlphaCase::Open01 => 1.0 / (1.0 + case.alpha),
        AlphaCase::One => 0.5,
    };
    let mean_fit = fit(&envelope, &points, window, |p| p.mean_ratio, |x| envelope.mean_rate(x), mean_exponent);
    let cov_fit = fit(&envelope, &points, window, cov_observed, |x| envelope.cov_rate(x), 1.0);
    Ok(TheoryCaseResult {
        case,
        k0,
        envelope,
        points,
        worst_mean_bound,
        worst_cov_bound,
        mean_fit,
        cov_fit,
    })
}

/// Every combination of the given modes, alphas, betas and dimensions, each
/// on its own random instance derived from `seed`.
pub fn theory_grid(modes: &[Mode], alphas: &[f64], betas: &[f64], dims: &[usize], seed: u64) -> Vec<TheoryCase> {
    let mut out = Vec::new();
    for &mode in modes {
        for &alpha in alphas {
            for &beta in betas {
                for &d in dims {
                    let index = out.len() as u64;
                    out.push(TheoryCase {
                        mode,
                        alpha,
                        beta,
                        d,
                        seed: seed.wrapping_mul(1_000_003).wrapping_add(index),
                    });
                }
            }
        }
    }
    out
}

/// [`run_theory_case`] on the random instance selected by `case.seed`.
pub fn run_random_case(case: TheoryCase, dt: Option<f64>) -> Result<TheoryCaseResult> {
    let (target, state0) = random_instance(case.d, case.seed)?;
    run_theory_case(case, &target, &state0, dt)
}

/// Alpha case label used in reports.
pub fn alpha_label(alpha: f64) -> &'static str {
    match AlphaCase::from_alpha(alpha) {
        AlphaCase::Zero => "zero",
        AlphaCase::Open01 => "open01",
        AlphaCase::One => "one",
    }
}

/// Convenience for building a one-dimensional state.
pub fn scalar_state(m: f64, c: f64) -> Result<GaussianState> {
    GaussianState::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, c))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_alpha_zero_unit_beta_factor_is_half() {
        let target = GaussianTarget::new(DVector::zeros(1), DMatrix::identity(1, 1)).unwrap();
        let state = scalar_state(1.0, 3.0).unwrap();
        let case = TheoryCase {
            mode: Mode::Sampling,
            alpha: 0.0,
            beta: 1.0,
            d: 1,
            seed: 0,
        };
        let r = run_theory_case(case, &target, &state, None).unwrap();
        assert!((r.mean_fit.fitted - 0.5).abs() < 1e-6, "{:?}", r.mean_fit);
        assert!((r.cov_fit.fitted - 0.5).abs() < 1e-6, "{:?}", r.cov_fit);
    }

    #[test]
    fn loewner_ratio_of_scaled_matrix() {
        let c0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert!((loewner_ratio(&(&c0 * 0.3), &c0).unwrap() - 0.3).abs() < 1e-14);
    }

    #[test]
    fn random_instances_are_reproducible() {
        let (t1, s1) = random_instance(3, 42).unwrap();
        let (t2, s2) = random_instance(3, 42).unwrap();
        assert_eq!(t1.covariance(), t2.covariance());
        assert_eq!(s1, s2);
    }

    #[test]
    fn exponent_of_exact_power_law() {
        let xs = [50.0, 75.0, 100.0];
        let es = xs.map(|x: f64| 3.0 * (x + 7.0f64).powf(-0.6));
        assert!((algebraic_exponent(xs, es).unwrap() - 0.6).abs() < 1e-9);
        // geometric decay is not a decelerating power law
        assert!(algebraic_exponent(xs, xs.map(|x: f64| 0.9f64.powf(x))).is_none());
    }

    #[test]
    fn optimization_alpha_zero_covariance_is_exact() {
        let case = TheoryCase {
            mode: Mode::Optimization,
            alpha: 0.0,
            beta: 2.0,
            d: 3,
            seed: 4,
        };
        let r = run_random_case(case, None).unwrap();
        // C_n <= k0/(k0 + beta n) C0 is attained in the Loewner order
        for p in &r.points {
            assert!((p.cov_loewner - r.envelope.cov_bound(p.x)).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_size() {
        let g = theory_grid(&[Mode::Sampling], &[0.0, 0.5], &[1.0, 2.0, 3.0], &[1, 3], 7);
        assert_eq!(g.len(), 12);
    }
}
