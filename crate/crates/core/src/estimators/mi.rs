use super::correlation::midranks;
use super::EstimatorError;

pub const DEFAULT_BINS: usize = 16;

/// Equal-frequency bin index per sample: `floor(rank·B/T)` on zero-based
/// mid-ranks, so tied values always share a bin.
pub fn quantile_bins(x: &[f64], bins: usize) -> Vec<usize> {
    let t = x.len() as f64;
    midranks(x)
        .into_iter()
        .map(|r| (((r * bins as f64) / t).floor() as usize).min(bins - 1))
        .collect()
}

/// Plug-in mutual information in bits on a `bins × bins` quantile-binned
/// joint histogram.
///
/// Cells are visited in transpose-symmetric pairs so that swapping the
/// arguments yields a bit-identical result.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64, EstimatorError> {
    if x.len() != y.len() {
        return Err(EstimatorError::LengthMismatch(x.len(), y.len()));
    }
    if bins < 2 {
        return Err(EstimatorError::InvalidParameter(format!("bins = {bins}, need at least 2")));
    }
    if x.len() < 10 * bins {
        return Err(EstimatorError::TooFewSamples { need: 10 * bins, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let bx = quantile_bins(x, bins);
    let by = quantile_bins(y, bins);
    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&a, &b) in bx.iter().zip(&by) {
        joint[a * bins + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let occupied = |m: &[usize]| m.iter().filter(|&&c| c > 0).count();
    if occupied(&mx) < 2 || occupied(&my) < 2 {
        return Err(EstimatorError::ConstantInput);
    }
    let t = x.len() as f64;
    let term = |a: usize, b: usize| -> f64 {
        let c = joint[a * bins + b];
        if c == 0 {
            return 0.0;
        }
        let c = c as f64;
        c / t * (c * t / (mx[a] as f64 * my[b] as f64)).log2()
    };
    let mut mi = 0.0;
    for a in 0..bins {
        mi += term(a, a);
        for b in a + 1..bins {
            // swapping the arguments swaps these two terms exactly
            mi += term(a, b) + term(b, a);
        }
    }
    Ok(mi.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn copy_and_negation() {
        let x: Vec<f64> = (0..1600).map(|i| ((i * 7919) % 1600) as f64 * 0.01).collect();
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((mutual_information(&x, &x, 16).unwrap() - 4.0).abs() < 1e-12);
        assert!((mutual_information(&x, &neg, 16).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn independent_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let mi = mutual_information(&x, &y, 16).unwrap();
        // plug-in bias ≈ (B−1)²/(2T ln 2) ≈ 0.016 bits
        assert!(mi < 0.05, "{mi}");
        assert!(mi > 0.0);
    }

    #[test]
    fn errors() {
        let x = vec![1.0; 200];
        let y: Vec<f64> = (0..200).map(f64::from).collect();
        assert_eq!(mutual_information(&x, &y, 16), Err(EstimatorError::ConstantInput));
        assert!(matches!(
            mutual_information(&y[..100], &y[..100], 16),
            Err(EstimatorError::TooFewSamples { .. })
        ));
    }

    proptest! {
        #[test]
        fn symmetric_bounded(seed in 0u64..10_000, n in 40usize..300, coupling in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = x.iter().map(|v| coupling * v + rng.random::<f64>()).collect();
            let a = mutual_information(&x, &y, 4).unwrap();
            let b = mutual_information(&y, &x, 4).unwrap();
            prop_assert_eq!(a.to_bits(), b.to_bits());
            prop_assert!((0.0..=2.0 + 1e-12).contains(&a));
        }
    }
}
