use serde::{Deserialize, Serialize};

use super::sweep::{AblationSweepResult, SweepClass};
use super::PipelineError;
use crate::estimators::least_squares;

/// Acceptance thresholds for the three-regime fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeThresholds {
    /// Largest |log-log slope| of the left segment that still counts as flat.
    pub plateau_slope_max: f64,
    /// Minimum ratio between the plateau level and the middle-segment line
    /// extrapolated over the plateau ranks (geometric mean, either sign).
    pub gap_min: f64,
    /// Minimum ratio |slope_right| / |slope_middle| for a rapid-decay tail.
    pub tail_slope_ratio: f64,
    pub min_plateau: usize,
    pub min_middle: usize,
    pub min_tail: usize,
    pub min_positive: usize,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            plateau_slope_max: 0.2,
            gap_min: 1.5,
            tail_slope_ratio: 2.0,
            min_plateau: 3,
            min_middle: 10,
            min_tail: 3,
            min_positive: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentFit {
    pub start_rank: usize,
    pub end_rank: usize,
    pub slope: f64,
    pub intercept: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSegmentation {
    /// Last rank of the plateau; 0 when no plateau was accepted.
    pub plateau_end_rank: usize,
    /// Last rank of the power-law regime; the curve length when no
    /// rapid-decay tail was accepted.
    pub powerlaw_end_rank: usize,
    pub kappa: f64,
    pub beta: f64,
    pub r_squared: Option<f64>,
    /// Neuron indices at ranks `1..=plateau_end_rank`.
    pub plateau_set: Vec<usize>,
    pub n_ranks: usize,
    pub plateau_slope: Option<f64>,
    /// Mean log-gap between plateau and extrapolated power law.
    pub plateau_log_gap: Option<f64>,
    pub tail_slope: Option<f64>,
    pub segments: Vec<SegmentFit>,
}

impl RegimeSegmentation {
    pub fn has_plateau(&self) -> bool {
        self.plateau_end_rank > 0
    }
}

/// Prefix sums giving O(1) least-squares error for any rank interval.
struct Prefix {
    n: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    xx: Vec<f64>,
    xy: Vec<f64>,
    yy: Vec<f64>,
}

impl Prefix {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let cum = |f: &dyn Fn(usize) -> f64| {
            let mut v = Vec::with_capacity(x.len() + 1);
            v.push(0.0);
            let mut acc = 0.0;
            for i in 0..x.len() {
                acc += f(i);
                v.push(acc);
            }
            v
        };
        Self {
            n: cum(&|_| 1.0),
            x: cum(&|i| x[i]),
            y: cum(&|i| y[i]),
            xx: cum(&|i| x[i] * x[i]),
            xy: cum(&|i| x[i] * y[i]),
            yy: cum(&|i| y[i] * y[i]),
        }
    }

    /// SSE of the best line over indices `a..b`.
    fn sse(&self, a: usize, b: usize) -> f64 {
        let n = self.n[b] - self.n[a];
        let sx = self.x[b] - self.x[a];
        let sy = self.y[b] - self.y[a];
        let vx = self.xx[b] - self.xx[a] - sx * sx / n;
        let vy = self.yy[b] - self.yy[a] - sy * sy / n;
        let cxy = self.xy[b] - self.xy[a] - sx * sy / n;
        if vx <= 1e-300 {
            return vy.max(0.0);
        }
        (vy - cxy * cxy / vx).max(0.0)
    }
}

fn fit(x: &[f64], y: &[f64], a: usize, b: usize) -> SegmentFit {
    let (slope, intercept, _) = least_squares(&x[a..b], &y[a..b]);
    SegmentFit {
        start_rank: a + 1,
        end_rank: b,
        slope,
        intercept,
    }
}

fn r_squared(x: &[f64], y: &[f64], s: &SegmentFit) -> Option<f64> {
    let (a, b) = (s.start_rank - 1, s.end_rank);
    let ys = &y[a..b];
    let m = ys.iter().sum::<f64>() / ys.len() as f64;
    let sst: f64 = ys.iter().map(|v| (v - m).powi(2)).sum();
    if sst <= 0.0 {
        return None;
    }
    let sse: f64 = x[a..b].iter().zip(ys).map(|(xi, yi)| (yi - s.slope * xi - s.intercept).powi(2)).sum();
    Some(1.0 - sse / sst)
}

/// Splits a descending influence curve into plateau, power-law and
/// rapid-decay regimes by an exhaustive two-changepoint search that
/// minimizes the summed squared error of three independent log-log lines.
///
/// The plateau is kept only if its own slope is shallow and its level is
/// offset from the extrapolated middle line by at least `gap_min`; the
/// tail only if it falls at least `tail_slope_ratio` times faster than the
/// middle. A rejected plateau falls back to the best two-piece split.
/// Only strictly positive values take part; they must number at least
/// `min_positive`.
pub fn segment_curve(values: &[f64], th: &RegimeThresholds) -> Result<RegimeSegmentation, PipelineError> {
    let positive = values.iter().take_while(|v| **v > 0.0 && v.is_finite()).count();
    if positive < th.min_positive.max(th.min_plateau + th.min_middle + th.min_tail) {
        return Err(PipelineError::InsufficientPositiveMass {
            positive,
            needed: th.min_positive,
        });
    }
    if values[..positive].windows(2).any(|w| w[0] < w[1]) {
        return Err(PipelineError::InvalidInput("influence curve must be sorted descending".into()));
    }
    let n = positive;
    let x: Vec<f64> = (1..=n).map(|r| (r as f64).ln()).collect();
    let y: Vec<f64> = values[..n].iter().map(|v| v.ln()).collect();
    let pre = Prefix::new(&x, &y);

    let mut best3 = (f64::INFINITY, 0, 0);
    for c1 in th.min_plateau..=n - th.min_middle - th.min_tail {
        let left = pre.sse(0, c1);
        if left >= best3.0 {
            continue;
        }
        for c2 in c1 + th.min_middle..=n - th.min_tail {
            let s = left + pre.sse(c1, c2) + pre.sse(c2, n);
            if s < best3.0 {
                best3 = (s, c1, c2);
            }
        }
    }
    let (_, c1, c2) = best3;
    let left = fit(&x, &y, 0, c1);
    let middle = fit(&x, &y, c1, c2);
    let gap = (0..c1).map(|i| y[i] - (middle.intercept + middle.slope * x[i])).sum::<f64>() / c1 as f64;
    let plateau_ok = left.slope.abs() < th.plateau_slope_max && gap.abs() >= th.gap_min.ln();

    let (plateau_end, start, c2) = if plateau_ok {
        (c1, c1, c2)
    } else {
        let mut best2 = (f64::INFINITY, n);
        for c in th.min_middle..=n - th.min_tail {
            let s = pre.sse(0, c) + pre.sse(c, n);
            if s < best2.0 {
                best2 = (s, c);
            }
        }
        (0, 0, best2.1)
    };
    let middle = fit(&x, &y, start, c2);
    let tail = fit(&x, &y, c2, n);
    let tail_ok = tail.slope.abs() >= th.tail_slope_ratio * middle.slope.abs();
    let (powerlaw_end, middle) = if tail_ok { (c2, middle) } else { (n, fit(&x, &y, start, n)) };

    let mut segments = Vec::new();
    if plateau_ok {
        segments.push(left.clone());
    }
    segments.push(middle.clone());
    if tail_ok {
        segments.push(tail.clone());
    }
    Ok(RegimeSegmentation {
        plateau_end_rank: plateau_end,
        powerlaw_end_rank: powerlaw_end,
        kappa: -middle.slope,
        beta: middle.intercept,
        r_squared: r_squared(&x, &y, &middle),
        plateau_set: Vec::new(),
        n_ranks: values.len(),
        plateau_slope: plateau_ok.then_some(left.slope),
        plateau_log_gap: plateau_ok.then_some(gap),
        tail_slope: tail_ok.then_some(tail.slope),
        segments,
    })
}

/// Regime segmentation of one class of an ablation sweep.
pub fn segment_regimes(sweep: &AblationSweepResult, class: SweepClass, th: &RegimeThresholds) -> Result<RegimeSegmentation, PipelineError> {
    let mut seg = segment_curve(&sweep.curve(class), th)?;
    seg.plateau_set = sweep.ranking(class)[..seg.plateau_end_rank].to_vec();
    Ok(seg)
}
