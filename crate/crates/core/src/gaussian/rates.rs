//! Convergence envelopes for the Gaussian moment dynamics.
//!
//! For sampling, the envelopes bound `|m - a|_A / |m0 - a|_A` and
//! `||C - C_inf||_A / ||C0 - C_inf||_A`. For optimization, the mean envelope
//! bounds `|m - a|_A / |m0 - a|_A` and the covariance envelope `c` gives
//! `C <= c C0` in the Loewner order. `x` is the iteration count in the
//! discrete cases and time in the continuous case.

use serde::{Deserialize, Serialize};

use crate::engine::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaCase {
    /// `alpha = 0`.
    Zero,
    /// `alpha` in `(0, 1)`.
    Open01,
    /// Continuous time.
    One,
}

impl AlphaCase {
    pub fn from_alpha(alpha: f64) -> Self {
        if alpha <= 0.0 {
            AlphaCase::Zero
        } else if alpha >= 1.0 {
            AlphaCase::One
        } else {
            AlphaCase::Open01
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEnvelope {
    pub mode: Mode,
    pub alpha_case: AlphaCase,
    pub alpha: f64,
    pub beta: f64,
    pub k0: f64,
}

/// Envelope for the given mode and `alpha` in `[0, 1]`.
pub fn rate_envelope(mode: Mode, alpha: f64, beta: f64, k0: f64) -> RateEnvelope {
    debug_assert!((0.0..=1.0).contains(&alpha));
    RateEnvelope {
        mode,
        alpha_case: AlphaCase::from_alpha(alpha),
        alpha,
        beta,
        k0,
    }
}

impl RateEnvelope {
    fn lambda(&self) -> f64 {
        self.mode.lambda(self.beta)
    }

    /// Decay factor of the mean.
    pub fn mean_rate(&self, x: f64) -> f64 {
        let (a, b, k) = (self.alpha, self.beta, self.k0);
        match (self.mode, self.alpha_case) {
            (Mode::Sampling, AlphaCase::Zero) => self.lambda().powf(x),
            (Mode::Sampling, AlphaCase::Open01) => ((1.0 - a) * self.lambda() + a).powf(x),
            (Mode::Sampling, AlphaCase::One) => (-(1.0 - self.lambda()) * x).exp(),
            (Mode::Optimization, AlphaCase::Zero) => k / (k + b * x),
            (Mode::Optimization, AlphaCase::Open01) => {
                ((k + b) / (k + b + b * (1.0 - a * a) * x)).powf(1.0 / (1.0 + a))
            }
            (Mode::Optimization, AlphaCase::One) => ((k + b) / (k + b + 2.0 * b * x)).sqrt(),
        }
    }

    /// Decay factor of the covariance.
    pub fn cov_rate(&self, x: f64) -> f64 {
        let (a, b, k) = (self.alpha, self.beta, self.k0);
        match (self.mode, self.alpha_case) {
            (Mode::Sampling, AlphaCase::Zero) => self.lambda().powf(x),
            (Mode::Sampling, AlphaCase::Open01) => {
                ((1.0 - a * a) * self.lambda() + a * a).powf(x)
            }
            (Mode::Sampling, AlphaCase::One) => (-2.0 * (1.0 - self.lambda()) * x).exp(),
            (Mode::Optimization, AlphaCase::Zero) => k / (k + b * x),
            (Mode::Optimization, AlphaCase::Open01) => (k + b) / (k + b + b * (1.0 - a * a) * x),
            (Mode::Optimization, AlphaCase::One) => (k + b) / (k + b + 2.0 * b * x),
        }
    }

    /// Constant in front of [`Self::mean_rate`].
    pub fn mean_prefactor(&self) -> f64 {
        let k = self.k0.max(1.0);
        match (self.mode, self.alpha_case) {
            (Mode::Optimization, _) => 1.0,
            (Mode::Sampling, AlphaCase::Zero) => k,
            (Mode::Sampling, AlphaCase::Open01) => k.powf(1.0 / (1.0 + self.alpha)),
            (Mode::Sampling, AlphaCase::One) => self.k0.powf(self.lambda() / 2.0).max(1.0),
        }
    }

    /// Constant in front of [`Self::cov_rate`].
    pub fn cov_prefactor(&self) -> f64 {
        match (self.mode, self.alpha_case) {
            (Mode::Optimization, _) => 1.0,
            (Mode::Sampling, AlphaCase::One) => self.k0.powf(self.lambda()).max(1.0),
            (Mode::Sampling, _) => self.k0.max(1.0),
        }
    }

    pub fn mean_bound(&self, x: f64) -> f64 {
        self.mean_prefactor() * self.mean_rate(x)
    }

    pub fn cov_bound(&self, x: f64) -> f64 {
        self.cov_prefactor() * self.cov_rate(x)
    }
}
