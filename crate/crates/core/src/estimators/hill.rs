use serde::{Deserialize, Serialize};

use super::{EstimatorError, Spectrum};

const MIN_TAIL: usize = 5;
const MIN_POSITIVE: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixFinger {
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_peak: f64,
    /// Log-eigenvalues have no spread; `k` fell back to the minimum.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillResult {
    /// `+∞` when the top-k eigenvalues are all equal.
    #[serde(with = "crate::float_serde")]
    pub alpha_hill: f64,
    pub k: usize,
    pub lambda_k: f64,
    pub degenerate: bool,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tail size aligned with the peak of the eigenvalue density.
///
/// The peak is the centre of the modal bin of a Freedman–Diaconis histogram
/// of `ln λ`; `k` counts eigenvalues at or above it, clamped to `[5, n/2]`.
pub fn fix_finger_k(spec: &Spectrum) -> Result<FixFinger, EstimatorError> {
    let pos = spec.positive();
    let n = pos.len();
    if n < MIN_POSITIVE {
        return Err(EstimatorError::SpectrumTooSmall(n));
    }
    let mut logs: Vec<f64> = pos.iter().map(|v| v.ln()).collect();
    logs.sort_by(f64::total_cmp);
    let (lo, hi) = (logs[0], logs[n - 1]);
    let iqr = quantile(&logs, 0.75) - quantile(&logs, 0.25);
    let width = 2.0 * iqr * (n as f64).powf(-1.0 / 3.0);
    let max_k = n / 2;
    if !(width > 0.0) || hi <= lo {
        return Ok(FixFinger {
            k: MIN_TAIL,
            lambda_k: pos[MIN_TAIL - 1],
            lambda_peak: pos[MIN_TAIL - 1],
            degenerate: true,
        });
    }
    let n_bins = (((hi - lo) / width).ceil() as usize).clamp(1, 10 * n);
    let width = (hi - lo) / n_bins as f64;
    let mut counts = vec![0usize; n_bins];
    for v in &logs {
        counts[(((v - lo) / width) as usize).min(n_bins - 1)] += 1;
    }
    let modal = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("at least one bin");
    let lambda_peak = (lo + (modal as f64 + 0.5) * width).exp();
    let k = pos.iter().filter(|v| **v >= lambda_peak).count().clamp(MIN_TAIL, max_k);
    Ok(FixFinger {
        k,
        lambda_k: pos[k - 1],
        lambda_peak,
        degenerate: false,
    })
}

/// Hill tail index over the `k` largest eigenvalues:
/// `α = [ (1/k) Σ_{i≤k} ln(λ_i/λ_k) ]⁻¹`.
pub fn hill_alpha(spec: &Spectrum, k: usize) -> Result<HillResult, EstimatorError> {
    let pos = spec.positive();
    if k < 2 || k > pos.len() {
        return Err(EstimatorError::InvalidTail { k, n: pos.len() });
    }
    let lambda_k = pos[k - 1];
    let mean_log = pos[..k].iter().map(|v| (v / lambda_k).ln()).sum::<f64>() / k as f64;
    let degenerate = mean_log == 0.0;
    Ok(HillResult {
        alpha_hill: if degenerate { f64::INFINITY } else { 1.0 / mean_log },
        k,
        lambda_k,
        degenerate,
    })
}
