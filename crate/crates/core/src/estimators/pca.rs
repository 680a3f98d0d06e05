use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// Round-off floor below which negative eigenvalues are treated as zero.
const NEG_EIG_TOL: f64 = 1e-10;

/// Eigenvalue spectrum of a positive semi-definite matrix, descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub source_shape: (usize, usize),
}

impl Spectrum {
    /// Sorts descending and clamps values in `[−1e-10, 0)` to zero.
    pub fn new(mut eigenvalues: Vec<f64>, source_shape: (usize, usize)) -> Result<Self, EstimatorError> {
        if eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        if let Some((index, &value)) = eigenvalues.iter().enumerate().find(|(_, v)| **v < -NEG_EIG_TOL) {
            return Err(EstimatorError::NonPositiveValue { index, value });
        }
        for v in &mut eigenvalues {
            *v = v.max(0.0);
        }
        eigenvalues.sort_by(|a, b| b.total_cmp(a));
        Ok(Self { eigenvalues, source_shape })
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn positive(&self) -> &[f64] {
        let n = self.eigenvalues.iter().take_while(|v| **v > 0.0).count();
        &self.eigenvalues[..n]
    }
}

/// Eigenvalues of a symmetric matrix, descending. Round-off negatives are
/// clamped to zero.
pub fn symmetric_eigenvalues(m: ArrayView2<f64>) -> Vec<f64> {
    let n = m.nrows();
    let dm = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let mut ev: Vec<f64> = SymmetricEigen::new(dm).eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Spectrum of `scale · W Wᵀ` for `W` of shape `[rows × cols]`.
///
/// The smaller of the two Gram matrices is decomposed; the remaining
/// `rows − cols` eigenvalues (if any) are exactly zero.
pub fn spectrum_of_gram(w: ArrayView2<f64>, scale: f64) -> Result<Spectrum, EstimatorError> {
    let (rows, cols) = w.dim();
    if rows == 0 || cols == 0 {
        return Err(EstimatorError::Empty);
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let gram: Array2<f64> = if rows <= cols { w.dot(&w.t()) } else { w.t().dot(&w) };
    let mut ev: Vec<f64> = symmetric_eigenvalues(gram.view()).into_iter().map(|v| v * scale).collect();
    ev.resize(rows, 0.0);
    Spectrum::new(ev, (rows, cols))
}

/// Smallest `d` whose leading eigenvalues explain at least `tau` of the
/// total.
pub fn effective_dimension_from_eigenvalues(eigenvalues: &[f64], tau: f64) -> Result<usize, EstimatorError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(EstimatorError::InvalidParameter(format!("tau = {tau}")));
    }
    if eigenvalues.is_empty() {
        return Err(EstimatorError::Empty);
    }
    let mut ev: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        return Err(EstimatorError::ZeroVariance);
    }
    let mut acc = 0.0;
    for (i, v) in ev.iter().enumerate() {
        acc += v;
        // relative slack absorbs summation round-off at exact thresholds
        if acc >= tau * total * (1.0 - 1e-12) {
            return Ok(i + 1);
        }
    }
    Ok(ev.len())
}

/// PCA effective dimension of `acts` (`[N units × T samples]`): eigenvalues
/// of the `N × N` covariance with rows centred over samples.
pub fn effective_dimension(acts: ArrayView2<f64>, tau: f64) -> Result<usize, EstimatorError> {
    let (n, t) = acts.dim();
    if n == 0 {
        return Err(EstimatorError::Empty);
    }
    if t < 2 {
        return Err(EstimatorError::TooFewSamples { need: 2, got: t });
    }
    if acts.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let mut centred = acts.to_owned();
    for mut row in centred.rows_mut() {
        let m = row.sum() / t as f64;
        row.mapv_inplace(|x| x - m);
    }
    if centred.iter().all(|v| *v == 0.0) {
        return Err(EstimatorError::ZeroVariance);
    }
    let cov = centred.dot(&centred.t()) / (t as f64 - 1.0);
    effective_dimension_from_eigenvalues(&symmetric_eigenvalues(cov.view()), tau)
}
