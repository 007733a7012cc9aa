//! Particle ensembles and Gibbs-reweighted empirical moments.
//!
//! Weights `exp(-beta * f)` are handled in log space throughout: the inverse
//! temperature can grow by many orders of magnitude under adaptation, so the
//! raw exponentials overflow or underflow long before the weights stop being
//! meaningful.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CbsError, Result};

/// Normalized log-weights satisfy `logsumexp(values) = 0` to this tolerance.
pub const LOG_NORMALIZATION_TOL: f64 = 1e-12;
/// Relative asymmetry allowed in a weighted covariance.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;
/// Eigenvalues above `-PSD_REL_TOL * ||C||` are clamped to zero by [`sym_sqrt`].
pub const PSD_REL_TOL: f64 = 1e-10;

/// Numerical tolerances used by the moment computations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub log_normalization: f64,
    pub symmetry_rel: f64,
    pub psd_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            log_normalization: LOG_NORMALIZATION_TOL,
            symmetry_rel: SYMMETRY_REL_TOL,
            psd_rel: PSD_REL_TOL,
        }
    }
}

/// `J` particles in `R^d`, one particle per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    particles: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(particles: DMatrix<f64>) -> Result<Self> {
        if particles.nrows() == 0 || particles.ncols() == 0 {
            return Err(CbsError::InvalidEnsemble(format!(
                "need at least one particle in at least one dimension, got {}x{}",
                particles.nrows(),
                particles.ncols()
            )));
        }
        if particles.iter().any(|x| !x.is_finite()) {
            return Err(CbsError::InvalidEnsemble(
                "particle coordinates must be finite".into(),
            ));
        }
        Ok(Self { particles })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let j = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(CbsError::DimensionMismatch {
                expected: d,
                got: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(j, d, |r, c| rows[r][c]))
    }

    /// `J` copies of the same point.
    pub fn dirac(point: &[f64], count: usize) -> Result<Self> {
        Self::new(DMatrix::from_fn(count, point.len(), |_, c| point[c]))
    }

    pub fn particles(&self) -> &DMatrix<f64> {
        &self.particles
    }

    pub fn into_particles(self) -> DMatrix<f64> {
        self.particles
    }

    /// Number of particles `J`.
    pub fn len(&self) -> usize {
        self.particles.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.nrows() == 0
    }

    /// Parameter dimension `d`.
    pub fn dim(&self) -> usize {
        self.particles.ncols()
    }

    pub fn particle(&self, j: usize) -> Vec<f64> {
        self.particles.row(j).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|j| self.particle(j)).collect()
    }

    /// Unweighted ensemble mean.
    pub fn mean(&self) -> DVector<f64> {
        let j = self.len() as f64;
        DVector::from_fn(self.dim(), |c, _| self.particles.column(c).sum() / j)
    }

    /// Unweighted population covariance (divides by `J`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let uniform = vec![1.0 / self.len() as f64; self.len()];
        accumulate_covariance(&self.particles, &uniform, &mean)
    }

    /// Image of the ensemble under `theta -> B theta + b`.
    pub fn affine_map(&self, b_mat: &DMatrix<f64>, shift: &DVector<f64>) -> Result<Self> {
        let d = self.dim();
        if b_mat.shape() != (d, d) || shift.len() != d {
            return Err(CbsError::DimensionMismatch {
                expected: d,
                got: shift.len(),
            });
        }
        let mut out = &self.particles * b_mat.transpose();
        for mut row in out.row_iter_mut() {
            row += shift.transpose();
        }
        Self::new(out)
    }
}

/// Normalized log-weights `log(w_j)` with `sum_j w_j = 1`.
///
/// Particles whose objective value is `+inf` (or NaN) carry weight exactly
/// zero and are stored as `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights {
    values: Vec<f64>,
    normalized: bool,
}

impl LogWeights {
    /// Wraps raw log-weights and normalizes them with log-sum-exp.
    pub fn from_unnormalized(values: Vec<f64>) -> Result<Self> {
        let lse = logsumexp(&values);
        if lse == f64::NEG_INFINITY || lse.is_nan() {
            return Err(CbsError::AllInfinite);
        }
        let values = values
            .into_iter()
            .map(|v| if v.is_finite() { v - lse } else { f64::NEG_INFINITY })
            .collect();
        Ok(Self {
            values,
            normalized: true,
        })
    }

    pub fn uniform(count: usize) -> Self {
        Self {
            values: vec![-(count as f64).ln(); count],
            normalized: true,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Linear-scale weights.
    pub fn weights(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.exp()).collect()
    }
}

/// Weighted mean and covariance of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMoments {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl WeightedMoments {
    /// Checks symmetry and positive semidefiniteness at the given tolerances.
    pub fn check(&self, tol: &Tolerances) -> Result<()> {
        let c = &self.covariance;
        let scale = 1.0 + c.amax();
        if (c - c.transpose()).amax() > tol.symmetry_rel * scale {
            return Err(CbsError::NotPsd {
                min_eigenvalue: f64::NAN,
            });
        }
        let eig = SymmetricEigen::new(c.clone());
        let min = eig.eigenvalues.min();
        let norm = eig.eigenvalues.amax();
        if min < -tol.psd_rel * (1.0 + norm) {
            return Err(CbsError::NotPsd {
                min_eigenvalue: min,
            });
        }
        Ok(())
    }
}

/// Numerically stable `log(sum(exp(values)))`; `-inf` entries contribute nothing.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values
        .iter()
        .copied()
        .filter(|v| !v.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values
        .iter()
        .filter(|v| !v.is_nan())
        .map(|v| (v - max).exp())
        .sum();
    max + sum.ln()
}

/// Normalized Gibbs log-weights `-beta f_j - logsumexp_k(-beta f_k)`.
///
/// Values are shifted by the smallest finite `f` before scaling so that a
/// huge `beta` cannot push every weight to `-inf` at once.
pub fn log_weights(ensemble: &Ensemble, f_values: &[f64], beta: f64) -> Result<LogWeights> {
    if f_values.len() != ensemble.len() {
        return Err(CbsError::DimensionMismatch {
            expected: ensemble.len(),
            got: f_values.len(),
        });
    }
    gibbs_log_weights(f_values, beta)
}

pub(crate) fn gibbs_log_weights(f_values: &[f64], beta: f64) -> Result<LogWeights> {
    if !(beta >= 0.0) {
        return Err(CbsError::ConfigInvalid(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    let f_min = f_values
        .iter()
        .copied()
        .filter(|f| f.is_finite())
        .fold(f64::INFINITY, f64::min);
    if f_min == f64::INFINITY {
        return Err(CbsError::AllInfinite);
    }
    let raw = f_values
        .iter()
        .map(|&f| {
            if f.is_finite() {
                -beta * (f - f_min)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    LogWeights::from_unnormalized(raw)
}

fn check_weights(ensemble: &Ensemble, w: &LogWeights) -> Result<()> {
    if w.len() != ensemble.len() {
        return Err(CbsError::DimensionMismatch {
            expected: ensemble.len(),
            got: w.len(),
        });
    }
    Ok(())
}

/// `sum_j w_j theta_j`, accumulated as offsets from the heaviest particle so
/// that identical particles reproduce their common position exactly.
pub fn weighted_mean(ensemble: &Ensemble, w: &LogWeights) -> Result<DVector<f64>> {
    check_weights(ensemble, w)?;
    let p = ensemble.particles();
    let anchor = w
        .values()
        .iter()
        .enumerate()
        .fold(0, |best, (j, &lw)| if lw > w.values()[best] { j } else { best });
    let mut offset = DVector::<f64>::zeros(ensemble.dim());
    for (j, lw) in w.values().iter().enumerate() {
        let wj = lw.exp();
        if wj == 0.0 {
            continue;
        }
        for c in 0..ensemble.dim() {
            offset[c] += wj * (p[(j, c)] - p[(anchor, c)]);
        }
    }
    Ok(DVector::from_fn(ensemble.dim(), |c, _| p[(anchor, c)] + offset[c]))
}

/// `sum_j w_j (theta_j - mean)(theta_j - mean)^T`, symmetric by construction.
pub fn weighted_covariance(
    ensemble: &Ensemble,
    w: &LogWeights,
    mean: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_weights(ensemble, w)?;
    if mean.len() != ensemble.dim() {
        return Err(CbsError::DimensionMismatch {
            expected: ensemble.dim(),
            got: mean.len(),
        });
    }
    Ok(accumulate_covariance(
        ensemble.particles(),
        &w.weights(),
        mean,
    ))
}

fn accumulate_covariance(p: &DMatrix<f64>, weights: &[f64], mean: &DVector<f64>) -> DMatrix<f64> {
    let d = p.ncols();
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (j, &wj) in weights.iter().enumerate() {
        if wj == 0.0 {
            continue;
        }
        for c in 0..d {
            centered[c] = p[(j, c)] - mean[c];
        }
        for r in 0..d {
            let wr = wj * centered[r];
            for c in r..d {
                cov[(r, c)] += wr * centered[c];
            }
        }
    }
    for r in 0..d {
        for c in 0..r {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    cov
}

/// Weighted mean and covariance in one call.
pub fn weighted_moments(ensemble: &Ensemble, w: &LogWeights) -> Result<WeightedMoments> {
    let mean = weighted_mean(ensemble, w)?;
    let covariance = weighted_covariance(ensemble, w, &mean)?;
    Ok(WeightedMoments { mean, covariance })
}

/// Symmetric square root of a PSD matrix via eigendecomposition.
pub fn sym_sqrt(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_sqrt_with(c, PSD_REL_TOL)
}

/// [`sym_sqrt`] with an explicit relative clamping tolerance.
pub fn sym_sqrt_with(c: &DMatrix<f64>, psd_rel: f64) -> Result<DMatrix<f64>> {
    if !c.is_square() {
        return Err(CbsError::DimensionMismatch {
            expected: c.nrows(),
            got: c.ncols(),
        });
    }
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let norm = eig.eigenvalues.amax();
    let floor = -psd_rel * norm;
    let mut roots = eig.eigenvalues.clone();
    for ev in roots.iter_mut() {
        if *ev < floor {
            return Err(CbsError::NotPsd { min_eigenvalue: *ev });
        }
        *ev = ev.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    let s = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((&s + s.transpose()) * 0.5)
}
