//! One-dimensional weighted moments by composite Gauss-Legendre quadrature,
//! and the fixed point of the mean-field map `(m, C) -> (m_beta, (1 + beta) C_beta)`.

use serde::{Deserialize, Serialize};

use crate::error::{CbsError, Result};

pub const QUADRATURE_REL_TOL: f64 = 1e-10;
const NODES_PER_PANEL: usize = 20;
const INITIAL_HALF_WIDTH: f64 = 12.0;
const HALF_WIDTH_STEP: f64 = 12.0;
const MAX_HALF_WIDTH: f64 = 60.0;
const TAIL_REL_TOL: f64 = 1e-12;
const MIN_PANELS: usize = 8;
const MAX_PANELS: usize = 1 << 15;
const FIXED_POINT_TOL: f64 = 1e-10;
const MAX_FIXED_POINT_ITERS: usize = 10_000;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // three-term recurrence for P_n and its derivative
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    mass: f64,
    mean: f64,
    var: f64,
}

fn log_density(theta: f64, m: f64, c: f64, f: &dyn Fn(f64) -> f64, beta: f64) -> f64 {
    let value = if beta == 0.0 { 0.0 } else { f(theta) };
    if value.is_nan() || value == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    -(theta - m).powi(2) / (2.0 * c) - beta * value
}

fn composite(
    lo: f64,
    hi: f64,
    panels: usize,
    rule: &(Vec<f64>, Vec<f64>),
    shift: f64,
    logp: &dyn Fn(f64) -> f64,
) -> Moments {
    let h = (hi - lo) / panels as f64;
    let mut pts = Vec::with_capacity(panels * rule.0.len());
    for p in 0..panels {
        let mid = lo + (p as f64 + 0.5) * h;
        for (x, w) in rule.0.iter().zip(&rule.1) {
            let theta = mid + 0.5 * h * x;
            let weight = 0.5 * h * w * (logp(theta) - shift).exp();
            pts.push((theta, weight));
        }
    }
    let mass: f64 = pts.iter().map(|(_, w)| w).sum();
    let mean = pts.iter().map(|(t, w)| t * w).sum::<f64>() / mass;
    let var = pts.iter().map(|(t, w)| (t - mean).powi(2) * w).sum::<f64>() / mass;
    Moments { mass, mean, var }
}

fn converged(prev: &Moments, next: &Moments, sd: f64) -> bool {
    let tol = QUADRATURE_REL_TOL;
    (next.mass - prev.mass).abs() <= tol * next.mass
        && (next.mean - prev.mean).abs() <= tol * (next.mean.abs() + sd)
        && (next.var - prev.var).abs() <= tol * next.var
}

/// Mean and variance of the density proportional to
/// `exp(-(theta - m)^2 / (2 C) - beta f(theta))`.
///
/// The integration window starts at `m +- 12 sqrt(C)` and widens in steps of
/// `12 sqrt(C)` up to `60 sqrt(C)` while the density at the window edges is
/// not negligible against the total mass. Panels are doubled until successive
/// estimates agree to [`QUADRATURE_REL_TOL`].
pub fn quadrature_weighted_moments_1d(
    m: f64,
    c: f64,
    f: &dyn Fn(f64) -> f64,
    beta: f64,
) -> Result<(f64, f64)> {
    if !(c > 0.0) || !c.is_finite() || !m.is_finite() || !(beta >= 0.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "need finite m, C > 0 and beta >= 0, got m = {m}, C = {c}, beta = {beta}"
        )));
    }
    let sd = c.sqrt();
    let rule = gauss_legendre(NODES_PER_PANEL);
    let logp = |theta: f64| log_density(theta, m, c, f, beta);
    let mut half = INITIAL_HALF_WIDTH;
    while half <= MAX_HALF_WIDTH + 1e-9 {
        let (lo, hi) = (m - half * sd, m + half * sd);
        let shift = (0..=4000)
            .map(|i| logp(lo + (hi - lo) * i as f64 / 4000.0))
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return Err(CbsError::QuadratureFailure);
        }
        let mut panels = MIN_PANELS;
        let mut prev = composite(lo, hi, panels, &rule, shift, &logp);
        let est = loop {
            panels *= 2;
            let next = composite(lo, hi, panels, &rule, shift, &logp);
            if converged(&prev, &next, sd) {
                break next;
            }
            if panels >= MAX_PANELS {
                return Err(CbsError::QuadratureFailure);
            }
            prev = next;
        };
        if !(est.mass > 0.0) || !est.mean.is_finite() || !est.var.is_finite() {
            return Err(CbsError::QuadratureFailure);
        }
        let edge = (logp(lo) - shift).exp() + (logp(hi) - shift).exp();
        if edge * sd <= TAIL_REL_TOL * est.mass {
            return Ok((est.mean, est.var));
        }
        half += HALF_WIDTH_STEP;
    }
    Err(CbsError::QuadratureFailure)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaplaceFixedPoint {
    pub m: f64,
    pub c: f64,
    pub iterations: usize,
}

/// Iterates `(m, C) -> (m_beta, (1 + beta) C_beta)` until the change in
/// `(m, C)` drops below `1e-10`. Without `init` the iteration starts at the
/// Laplace point `(theta_star, 1 / f''(theta_star))`.
pub fn laplace_fixed_point(
    f: &dyn Fn(f64) -> f64,
    f_second_at_min: f64,
    theta_star: f64,
    beta: f64,
    init: Option<(f64, f64)>,
) -> Result<LaplaceFixedPoint> {
    if !(f_second_at_min > 0.0) || !(beta > 0.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "need f'' > 0 and beta > 0, got {f_second_at_min} and {beta}"
        )));
    }
    let (mut m, mut c) = init.unwrap_or((theta_star, 1.0 / f_second_at_min));
    for iterations in 1..=MAX_FIXED_POINT_ITERS {
        let (mb, cb) = quadrature_weighted_moments_1d(m, c, f, beta)?;
        let (m_next, c_next) = (mb, (1.0 + beta) * cb);
        let change = (m_next - m).abs() + (c_next - c).abs();
        m = m_next;
        c = c_next;
        if change < FIXED_POINT_TOL {
            return Ok(LaplaceFixedPoint { m, c, iterations });
        }
    }
    Err(CbsError::NoConvergence {
        iterations: MAX_FIXED_POINT_ITERS,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::LogCosh;

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(NODES_PER_PANEL);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
        // exact up to degree 39
        let int: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(38)).sum();
        assert!((int - 2.0 / 39.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(3);
        assert!((x[2] - 0.6f64.sqrt()).abs() < 1e-15 && x[1].abs() < 1e-15);
        assert!((w[1] - 8.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn quadratic_matches_closed_form() {
        let (a, big_a, m, c, beta) = (0.7, 2.5, -1.2, 0.8, 3.0);
        let f = |t: f64| 0.5 * (t - a) * (t - a) / big_a;
        let (mq, cq) = quadrature_weighted_moments_1d(m, c, &f, beta).unwrap();
        let cb = 1.0 / (1.0 / c + beta / big_a);
        let mb = cb * (beta * a / big_a + m / c);
        assert!((mq - mb).abs() < 1e-9, "{mq} {mb}");
        assert!((cq - cb).abs() < 1e-9 * cb, "{cq} {cb}");
    }

    #[test]
    fn zero_beta_returns_prior_moments() {
        let f = |t: f64| t.powi(4);
        let (mq, cq) = quadrature_weighted_moments_1d(3.0, 2.0, &f, 0.0).unwrap();
        assert!((mq - 3.0).abs() < 1e-9 && (cq - 2.0).abs() < 1e-9);
    }

    #[test]
    fn even_potential_gives_zero_mean() {
        let f = LogCosh::value;
        let (mq, _) = quadrature_weighted_moments_1d(0.0, 1.3, &f, 5.0).unwrap();
        assert!(mq.abs() < 1e-14);
    }

    #[test]
    fn far_away_mass_fails() {
        let f = |t: f64| 0.5 * (t - 1000.0).powi(2);
        let err = quadrature_weighted_moments_1d(0.0, 1.0, &f, 100.0);
        assert_eq!(err, Err(CbsError::QuadratureFailure));
    }

    #[test]
    fn quadratic_fixed_point_is_target() {
        let (a, big_a) = (1.5, 0.3);
        let f = |t: f64| 0.5 * (t - a) * (t - a) / big_a;
        for beta in [0.5, 4.0] {
            let fp = laplace_fixed_point(&f, 1.0 / big_a, a, beta, Some((0.0, 1.0))).unwrap();
            assert!((fp.m - a).abs() < 1e-8 && (fp.c - big_a).abs() < 1e-8, "{fp:?}");
        }
    }
}
