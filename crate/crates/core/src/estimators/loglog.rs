use serde::{Deserialize, Serialize};

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    /// Decay exponent: the negated log-log slope.
    pub kappa: f64,
    /// Intercept of `ln y = beta − kappa·ln r`.
    pub beta: f64,
    /// `None` when `y` is constant over the range.
    pub r_squared: Option<f64>,
    pub n: usize,
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns
/// `(slope, intercept, sse)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sse = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (slope, intercept, sse)
}

/// Fits `ln values[r−1]` against `ln r` for 1-based ranks `lo..=hi`.
pub fn loglog_fit(ranked_values: &[f64], lo: usize, hi: usize) -> Result<LogLogFit, EstimatorError> {
    if lo == 0 || hi > ranked_values.len() || hi < lo + 10 {
        return Err(EstimatorError::InvalidParameter(format!(
            "rank range [{lo}, {hi}] over {} values",
            ranked_values.len()
        )));
    }
    let mut x = Vec::with_capacity(hi - lo + 1);
    let mut y = Vec::with_capacity(hi - lo + 1);
    for r in lo..=hi {
        let v = ranked_values[r - 1];
        if !(v > 0.0 && v.is_finite()) {
            return Err(EstimatorError::NonPositiveValue { index: r - 1, value: v });
        }
        x.push((r as f64).ln());
        y.push(v.ln());
    }
    if y.iter().all(|v| *v == y[0]) {
        return Ok(LogLogFit {
            kappa: 0.0,
            beta: y[0],
            r_squared: None,
            n: y.len(),
        });
    }
    let (slope, intercept, sse) = least_squares(&x, &y);
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let r_squared = Some(1.0 - sse / sst);
    Ok(LogLogFit {
        kappa: -slope,
        beta: intercept,
        r_squared,
        n: y.len(),
    })
}
