//! One-dimensional reduction of the Gaussian moment dynamics.
//!
//! With `u` the whitened mean offset and `v = beta C / A` the scaled
//! variance, the discrete recursion is
//! `u' = (alpha + (1 - alpha)/(1 + v)) u`,
//! `v' = alpha^2 v + (1 - alpha^2)/lambda * v/(1 + v)`,
//! and the continuous flow is
//! `u' = -v/(1 + v) u`, `v' = -2 v/(1 + v) (v - v_inf)` with `v_inf = (1 - lambda)/lambda`.
//! The offset `w = v - v_inf` is propagated directly.

use crate::error::{CbsError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarPoint {
    pub t: f64,
    pub u: f64,
    pub v: f64,
    /// `v - v_inf`, carried without cancellation.
    pub w: f64,
}

fn v_inf(lambda: f64) -> f64 {
    (1.0 - lambda) / lambda
}

/// Iterates the discrete recursion `n_steps` times; entry `n` is step `n`.
pub fn scalar_recursion(u0: f64, v0: f64, alpha: f64, lambda: f64, n_steps: usize) -> Vec<ScalarPoint> {
    let vi = v_inf(lambda);
    let mut p = ScalarPoint {
        t: 0.0,
        u: u0,
        v: v0,
        w: v0 - vi,
    };
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(p);
    for n in 1..=n_steps {
        let q = 1.0 / (1.0 + p.v);
        let u = p.u * (alpha + (1.0 - alpha) * q);
        let w = p.w * (alpha * alpha + (1.0 - alpha * alpha) * q);
        p = ScalarPoint {
            t: n as f64,
            u,
            v: vi + w,
            w,
        };
        out.push(p);
    }
    out
}

fn rhs(u: f64, w: f64, vi: f64) -> (f64, f64) {
    let v = vi + w;
    let g = v / (1.0 + v);
    (-g * u, -2.0 * g * w)
}

/// RK4 integration of the continuous flow; every step is recorded.
pub fn scalar_flow(u0: f64, v0: f64, lambda: f64, t_end: f64, dt: f64) -> Result<Vec<ScalarPoint>> {
    if !(dt > 0.0) || !(t_end > 0.0) || dt > t_end {
        return Err(CbsError::ConfigInvalid(format!(
            "need 0 < dt <= t_end, got dt = {dt}, t_end = {t_end}"
        )));
    }
    let vi = v_inf(lambda);
    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let h = t_end / steps as f64;
    let (mut u, mut w) = (u0, v0 - vi);
    let mut out = Vec::with_capacity(steps + 1);
    out.push(ScalarPoint {
        t: 0.0,
        u,
        v: v0,
        w,
    });
    for step in 1..=steps {
        let (a1, b1) = rhs(u, w, vi);
        let (a2, b2) = rhs(u + 0.5 * h * a1, w + 0.5 * h * b1, vi);
        let (a3, b3) = rhs(u + 0.5 * h * a2, w + 0.5 * h * b2, vi);
        let (a4, b4) = rhs(u + h * a3, w + h * b3, vi);
        u += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        w += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
        if !(vi + w > 0.0) {
            return Err(CbsError::StepRejected { t: step as f64 * h });
        }
        out.push(ScalarPoint {
            t: step as f64 * h,
            u,
            v: vi + w,
            w,
        });
    }
    Ok(out)
}

/// Lower and upper envelopes for `|u_n / u_0|` in the discrete recursion.
pub fn discrete_u_bounds(alpha: f64, lambda: f64, v0: f64, n: f64) -> (f64, f64) {
    let p = 1.0 / (1.0 + alpha);
    if lambda < 1.0 {
        let ratio = v_inf(lambda) / v0;
        let r = ((1.0 - alpha) * lambda + alpha).powf(n);
        (ratio.min(1.0).powf(p) * r, ratio.max(1.0).powf(p) * r)
    } else {
        let s = v0 * (1.0 - alpha * alpha) * n;
        ((1.0 / (1.0 + s)).powf(p), ((1.0 + v0) / (1.0 + v0 + s)).powf(p))
    }
}

/// Lower and upper envelopes for `|(v_n - v_inf)/(v_0 - v_inf)|` in the discrete recursion.
pub fn discrete_v_bounds(alpha: f64, lambda: f64, v0: f64, n: f64) -> (f64, f64) {
    if lambda < 1.0 {
        let ratio = v_inf(lambda) / v0;
        let r = ((1.0 - alpha * alpha) * lambda + alpha * alpha).powf(n);
        (ratio.min(1.0) * r, ratio.max(1.0) * r)
    } else {
        let s = v0 * (1.0 - alpha * alpha) * n;
        (1.0 / (1.0 + s), (1.0 + v0) / (1.0 + v0 + s))
    }
}

/// Lower and upper envelopes for `|u(t)/u(0)|` in the continuous flow.
pub fn continuous_u_bounds(lambda: f64, v0: f64, t: f64) -> (f64, f64) {
    if lambda < 1.0 {
        let ratio = (v_inf(lambda) / v0).powf(lambda / 2.0);
        let r = (-(1.0 - lambda) * t).exp();
        (ratio.min(1.0) * r, ratio.max(1.0) * r)
    } else {
        let s = 2.0 * v0 * t;
        ((1.0 / (1.0 + s)).sqrt(), ((1.0 + v0) / (1.0 + v0 + s)).sqrt())
    }
}

/// Lower and upper envelopes for `|(v(t) - v_inf)/(v(0) - v_inf)|` in the continuous flow.
pub fn continuous_v_bounds(lambda: f64, v0: f64, t: f64) -> (f64, f64) {
    if lambda < 1.0 {
        let ratio = (v_inf(lambda) / v0).powf(lambda);
        let r = (-2.0 * (1.0 - lambda) * t).exp();
        (ratio.min(1.0) * r, ratio.max(1.0) * r)
    } else {
        let s = 2.0 * v0 * t;
        (1.0 / (1.0 + s), (1.0 + v0) / (1.0 + v0 + s))
    }
}
