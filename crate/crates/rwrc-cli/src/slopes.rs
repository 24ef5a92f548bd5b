//! Slope fits of Monte Carlo tables against a predicted log-scale slope.

use rwrc::stats::{line_fit, weighted_line_fit, Z95};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One Monte Carlo estimate with its 95% interval, at scale variable `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopePoint {
    pub x: f64,
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    pub n_points: usize,
    /// Fitted slope of `ln(estimate)` against `x`.
    pub slope: f64,
    pub slope_std_error: f64,
    pub slope_ci: (f64, f64),
    pub intercept: f64,
    pub predicted_slope: f64,
    pub ratio: f64,
    /// `ratio * exp(±1.96 se / |slope|)`, symmetric around `ratio` on a log scale.
    pub ratio_ci: (f64, f64),
    /// Whether the fit used interval-derived weights (otherwise unit weights with residual errors).
    pub weighted: bool,
}

#[derive(Debug, Error, PartialEq)]
pub enum SlopeError {
    #[error("need at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate scale grid: all x values coincide")]
    DegenerateGrid,
    #[error("point {0}: estimate and interval must be positive and finite with lo <= estimate <= hi")]
    BadPoint(usize),
    #[error("either every point or no point may have a zero-width interval")]
    MixedIntervals,
    #[error("predicted slope must be finite and nonzero")]
    BadPrediction,
    #[error("fitted slope is zero, so the ratio interval is undefined")]
    FlatFit,
}

/// Weighted least squares of `ln(estimate)` on `x` with `sigma_i = (ln hi - ln lo) / (2 * 1.96)`.
pub fn compare_slopes(table: &[SlopePoint], predicted_slope: f64) -> Result<SlopeReport, SlopeError> {
    if table.len() < 3 {
        return Err(SlopeError::TooFewPoints(table.len()));
    }
    if !(predicted_slope.is_finite() && predicted_slope != 0.0) {
        return Err(SlopeError::BadPrediction);
    }
    for (i, p) in table.iter().enumerate() {
        let ok = [p.x, p.estimate, p.lo, p.hi].iter().all(|v| v.is_finite())
            && p.lo > 0.0
            && p.lo <= p.estimate
            && p.estimate <= p.hi;
        if !ok {
            return Err(SlopeError::BadPoint(i));
        }
    }
    let x: Vec<f64> = table.iter().map(|p| p.x).collect();
    let y: Vec<f64> = table.iter().map(|p| p.estimate.ln()).collect();
    let sigma: Vec<f64> = table.iter().map(|p| (p.hi.ln() - p.lo.ln()) / (2.0 * Z95)).collect();
    let zero = sigma.iter().filter(|&&s| s == 0.0).count();
    let weighted = zero == 0;
    let fit = if weighted {
        let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s)).collect();
        weighted_line_fit(&x, &y, &w)
    } else if zero == table.len() {
        line_fit(&x, &y)
    } else {
        return Err(SlopeError::MixedIntervals);
    }
    .ok_or(SlopeError::DegenerateGrid)?;
    if fit.slope == 0.0 {
        return Err(SlopeError::FlatFit);
    }
    let se = fit.slope_std_error;
    let ratio = fit.slope / predicted_slope;
    let spread = (Z95 * se / fit.slope.abs()).exp();
    let (a, b) = (ratio / spread, ratio * spread);
    Ok(SlopeReport {
        n_points: table.len(),
        slope: fit.slope,
        slope_std_error: se,
        slope_ci: (fit.slope - Z95 * se, fit.slope + Z95 * se),
        intercept: fit.intercept,
        predicted_slope,
        ratio,
        ratio_ci: (a.min(b), a.max(b)),
        weighted,
    })
}
