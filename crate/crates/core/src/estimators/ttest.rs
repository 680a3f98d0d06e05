use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::EstimatorError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    #[serde(with = "crate::float_serde")]
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// `P(|T| ≥ |t|)` for Student's t with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if !t.is_finite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Unequal-variance two-sample t-test with Satterthwaite degrees of freedom.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest, EstimatorError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(EstimatorError::TooFewSamples { need: 2, got: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Err(EstimatorError::DegenerateSample);
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

/// One-sample t-test of `mean(x) = mu`.
pub fn one_sample_t(x: &[f64], mu: f64) -> Result<TTest, EstimatorError> {
    if x.len() < 2 {
        return Err(EstimatorError::TooFewSamples { need: 2, got: x.len() });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let (m, v) = mean_var(x);
    if v == 0.0 {
        return Err(EstimatorError::DegenerateSample);
    }
    let df = x.len() as f64 - 1.0;
    let t = (m - mu) / (v / x.len() as f64).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

/// Tests whether a single observation `x` could come from the population
/// behind `sample`: Student's pooled two-sample test with one group of size
/// one, which borrows that group's variance from `sample`.
pub fn single_vs_sample_t(x: f64, sample: &[f64]) -> Result<TTest, EstimatorError> {
    if sample.len() < 2 {
        return Err(EstimatorError::TooFewSamples { need: 2, got: sample.len() });
    }
    if !x.is_finite() || sample.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFinite);
    }
    let (m, v) = mean_var(sample);
    if v == 0.0 {
        return Err(EstimatorError::DegenerateSample);
    }
    let n = sample.len() as f64;
    let t = (x - m) / (v * (1.0 + 1.0 / n)).sqrt();
    let df = n - 1.0;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.5, 4.0];
        let r = welch_t(&a, &a).unwrap();
        assert_eq!(r.t, 0.0);
        assert_eq!(r.p, 1.0);
    }

    #[test]
    fn separated_samples() {
        let r = welch_t(&[0.0; 4], &[10.0, 10.0, 10.0, 10.0001]).unwrap();
        assert!(r.p < 0.001);
        assert!((r.df - 3.0).abs() < 1e-9);
    }

    #[test]
    fn worked_example() {
        // Two 15-sample groups, unequal variances; reference t = −2.46,
        // df = 24.99, p = 0.021.
        let a = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4];
        let b = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 20.5, 24.4];
        let r = welch_t(&a, &b).unwrap();
        assert!((r.t + 2.455356398286006).abs() < 1e-3);
        assert!((r.df - 24.988529290231416).abs() < 1e-3);
        assert!((r.p - 0.021378001462866985).abs() < 1e-3);
    }

    #[test]
    fn p_value_precision() {
        // df = 1 is Cauchy: P(|T| ≥ 1) = 1/2 exactly.
        assert!((student_t_two_sided_p(1.0, 1.0) - 0.5).abs() < 1e-10);
        // df = 2: P(|T| ≥ t) = 1 − t/sqrt(2 + t²).
        for t in [0.3, 1.7, 4.2] {
            let exact = 1.0 - t / (2.0f64 + t * t).sqrt();
            assert!((student_t_two_sided_p(t, 2.0) - exact).abs() < 1e-8);
        }
    }

    #[test]
    fn one_sample() {
        let r = one_sample_t(&[0.1, 0.3, -0.2, 0.5, 0.4], 0.0).unwrap();
        assert!((r.t - 1.772810520855837).abs() < 1e-9);
        assert!((r.p - 0.15094405366901748).abs() < 1e-6);
    }

    #[test]
    fn degenerate() {
        assert_eq!(welch_t(&[1.0, 1.0], &[1.0, 1.0]), Err(EstimatorError::DegenerateSample));
        assert!(matches!(welch_t(&[1.0], &[1.0, 2.0]), Err(EstimatorError::TooFewSamples { .. })));
    }

    #[test]
    fn singleton_matches_pooled_two_sample() {
        // pooled variance of {x} and the sample equals the sample variance,
        // and the standard error is s·sqrt(1/1 + 1/n)
        let sample = [1.0, 2.0, 3.0];
        let r = single_vs_sample_t(5.0, &sample).unwrap();
        let t = 3.0 / (4.0f64 / 3.0).sqrt();
        assert!((r.t - t).abs() < 1e-12);
        assert_eq!(r.df, 2.0);
        assert!((r.p - (1.0 - t / (2.0 + t * t).sqrt())).abs() < 1e-8);
        assert_eq!(single_vs_sample_t(2.0, &sample).unwrap().p, 1.0);
        assert_eq!(single_vs_sample_t(1.0, &[2.0, 2.0]), Err(EstimatorError::DegenerateSample));
    }
}
