use super::EstimatorError;

/// Zero-based average ranks; tied values share the mean of their ranks.
pub fn midranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EstimatorError> {
    if x.len() != y.len() {
        return Err(EstimatorError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EstimatorError::TooFewSamples { need: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(EstimatorError::ConstantInput);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation of mid-ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EstimatorError> {
    if x.len() != y.len() {
        return Err(EstimatorError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(EstimatorError::TooFewSamples { need: 3, got: x.len() });
    }
    pearson(&midranks(x), &midranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monotone_and_reversed() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert!((spearman(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &rev).unwrap() + 1.0).abs() < 1e-15);
    }

    /// Rank by counting: rank(v) = #{w < v} + (#{w == v} − 1)/2.
    fn naive_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let less = x.iter().filter(|w| *w < v).count() as f64;
                let eq = x.iter().filter(|w| *w == v).count() as f64;
                less + (eq - 1.0) / 2.0
            })
            .collect()
    }

    fn naive_pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ties_match_naive_ranking() {
        let x = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.5, 2.0, 4.0];
        let y = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        assert_eq!(midranks(&x), naive_ranks(&x));
        let oracle = naive_pearson(&naive_ranks(&x), &naive_ranks(&y));
        assert!((spearman(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn constant_is_flagged() {
        assert_eq!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(EstimatorError::ConstantInput));
        assert!(matches!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(EstimatorError::TooFewSamples { .. })));
    }

    proptest! {
        #[test]
        fn invariant_under_monotone_maps(x in proptest::collection::vec(-50.0f64..50.0, 3..40), y in proptest::collection::vec(-50.0f64..50.0, 40)) {
            let y = &y[..x.len()];
            let base = spearman(&x, y);
            let tx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
            let ty: Vec<f64> = y.iter().map(|v| -v * v * v).collect();
            match (base, spearman(&tx, &ty)) {
                (Ok(a), Ok(b)) => prop_assert!((a + b).abs() < 1e-9, "{} {}", a, b),
                (Err(a), Err(b)) => prop_assert_eq!(a, b),
                _ => prop_assert!(false),
            }
        }
    }
}
