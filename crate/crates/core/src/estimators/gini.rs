use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GiniVariant {
    /// `1 − 2·Σ_i ((n+1−i)/n)·α_(i)` over ascending-sorted normalized
    /// weights. Uniform weights give `−1/n`.
    #[default]
    Verbatim,
    /// Verbatim value plus `1/n`: uniform weights give 0, one-hot gives
    /// `(n−1)/n`.
    BiasCorrected,
}

/// Attention concentration of a nonnegative weight vector (normalized to
/// sum 1 first).
pub fn gini(weights: &[f64]) -> Result<f64, EstimatorError> {
    gini_with(weights, GiniVariant::Verbatim)
}

pub fn gini_with(weights: &[f64], variant: GiniVariant) -> Result<f64, EstimatorError> {
    if weights.is_empty() {
        return Err(EstimatorError::Empty);
    }
    if let Some(i) = weights.iter().position(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(EstimatorError::InvalidWeight(i));
    }
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return Err(EstimatorError::AllZeroWeights);
    }
    let mut sorted: Vec<f64> = weights.iter().map(|w| w / total).collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let weighted: f64 = sorted.iter().enumerate().map(|(i, a)| (n - i as f64) / n * a).sum();
    let g = 1.0 - 2.0 * weighted;
    Ok(match variant {
        GiniVariant::Verbatim => g,
        GiniVariant::BiasCorrected => g + 1.0 / n,
    })
}
