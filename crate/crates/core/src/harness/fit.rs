//! Log-log least-squares rate fits.

use serde::Serialize;

use crate::error::{Error, Result};

/// OLS fit of `log y = intercept + slope · log x`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    /// `(log x, log y)` pairs the fit was computed from.
    pub points: Vec<(f64, f64)>,
}

/// Result of fitting a series that may be identically zero.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum FitOutcome {
    Fitted(RateFit),
    /// Every `y` is exactly zero; no logarithm exists.
    AllZero,
}

impl FitOutcome {
    pub fn slope(&self) -> Option<f64> {
        match self {
            FitOutcome::Fitted(f) => Some(f.slope),
            FitOutcome::AllZero => None,
        }
    }

    pub fn fitted(&self) -> Option<&RateFit> {
        match self {
            FitOutcome::Fitted(f) => Some(f),
            FitOutcome::AllZero => None,
        }
    }
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Data(format!("need at least 3 points, got {}", points.len())));
    }
    for &(x, y) in points {
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Data(format!("x must be positive and finite, got {x}")));
        }
        if !(y > 0.0 && y.is_finite()) {
            return Err(Error::Data(format!("y must be positive and finite, got {y}")));
        }
    }
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("all x values are equal".into()));
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = logs.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr_slope = (sse / (n - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        intercept,
        stderr_slope,
        points: logs,
    })
}

/// Like [`fit_rate`], but an identically zero series is flagged instead of rejected.
pub fn fit_series(points: &[(f64, f64)]) -> Result<FitOutcome> {
    if !points.is_empty() && points.iter().all(|p| p.1 == 0.0) {
        return Ok(FitOutcome::AllZero);
    }
    fit_rate(points).map(FitOutcome::Fitted)
}
