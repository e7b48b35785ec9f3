use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::EstimatorError;

/// Normalized estimation error squared, `e' P^-1 e`.
pub fn nees(error: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64, EstimatorError> {
    if error.len() != cov.nrows() || !cov.is_square() {
        return Err(EstimatorError::DimensionMismatch(error.len(), cov.nrows()));
    }
    if error.iter().all(|e| *e == 0.0) {
        return Ok(0.0);
    }
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| EstimatorError::NotPositiveDefinite("covariance".into()))?;
    Ok(error.dot(&chol.solve(error)))
}

/// Two-sided chi-square interval of the mean of `samples` draws with `dof`
/// degrees of freedom each.
pub fn chi_square_mean_bounds(dof: usize, samples: usize, confidence: f64) -> (f64, f64) {
    let k = (dof * samples) as f64;
    let dist = ChiSquared::new(k).expect("positive dof");
    let tail = (1.0 - confidence) / 2.0;
    (
        dist.inverse_cdf(tail) / samples as f64,
        dist.inverse_cdf(1.0 - tail) / samples as f64,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencySummary {
    pub dof: usize,
    pub epochs: usize,
    pub mean: f64,
    /// 95% bounds on the mean under the chi-square hypothesis.
    pub mean_bounds: (f64, f64),
    /// Fraction of single epochs inside the per-epoch 95% interval.
    pub epoch_coverage: f64,
}

impl ConsistencySummary {
    pub fn mean_within_bounds(&self) -> bool {
        self.mean >= self.mean_bounds.0 && self.mean <= self.mean_bounds.1
    }
}

/// Summarizes an NEES (or NIS) series.
pub fn consistency_stats(series: &[f64], dof: usize) -> Option<ConsistencySummary> {
    if series.is_empty() || dof == 0 {
        return None;
    }
    let n = series.len();
    let mean = series.iter().sum::<f64>() / n as f64;
    let (lo, hi) = chi_square_mean_bounds(dof, 1, 0.95);
    let inside = series.iter().filter(|v| **v >= lo && **v <= hi).count();
    Some(ConsistencySummary {
        dof,
        epochs: n,
        mean,
        mean_bounds: chi_square_mean_bounds(dof, n, 0.95),
        epoch_coverage: inside as f64 / n as f64,
    })
}
