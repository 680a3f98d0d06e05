use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::estimators::{single_vs_sample_t, student_t_two_sided_p, EstimatorError, TTest};
use crate::model::{ForwardOptions, Intervention, Model};
use crate::tensor_io::TokenStream;
use crate::token_stats::{TokenClass, TokenClassSplit};

/// p-value below which a difference is marked significant.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Final-layer activations at every evaluated position, in the same order
/// as the ablation sweep: position `t` of a window predicts `w[t + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionActivations {
    /// `[positions × d_mlp]`
    pub acts: Array2<f64>,
    pub targets: Vec<u32>,
}

impl PositionActivations {
    /// Positions whose target falls in `class`.
    pub fn class_positions(&self, split: &TokenClassSplit, class: TokenClass) -> Vec<usize> {
        (0..self.targets.len()).filter(|&p| split.class_of(self.targets[p]) == class).collect()
    }

    /// Rows of `acts` at the given positions, `[positions × d_mlp]`.
    pub fn rows(&self, positions: &[usize]) -> Array2<f64> {
        self.acts.select(Axis(0), positions)
    }
}

/// Runs the model over every window, optionally under interventions, and
/// gathers the final-layer activations of all positions that have a target.
pub fn final_activations(model: &Model, stream: &TokenStream, interventions: &[Intervention]) -> Result<PositionActivations, PipelineError> {
    model.validate(interventions)?;
    let windows = stream.windows(model.arch().max_context);
    let opts = ForwardOptions { capture_attention: false };
    let parts: Vec<Array2<f64>> = windows
        .par_iter()
        .filter(|w| w.len() > 1)
        .map(|w| {
            let acts = model.forward_with(w, interventions, opts)?.mlp_acts;
            Ok(acts.slice(ndarray::s![..w.len() - 1, ..]).to_owned())
        })
        .collect::<Result<_, PipelineError>>()?;
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|a| a.view()).collect();
    let acts = if views.is_empty() {
        Array2::zeros((0, model.arch().d_mlp))
    } else {
        ndarray::concatenate(Axis(0), &views).expect("equal widths")
    };
    let targets = windows.iter().filter(|w| w.len() > 1).flat_map(|w| w[1..].iter().copied()).collect();
    Ok(PositionActivations { acts, targets })
}

/// `r` seeded random groups of `size` neurons drawn from `0..n` without
/// the excluded indices. Each group is sorted.
pub fn sample_baseline_groups(n: usize, exclude: &[usize], size: usize, r: usize, seed: u64) -> Result<Vec<Vec<usize>>, PipelineError> {
    let pool: Vec<usize> = (0..n).filter(|i| !exclude.contains(i)).collect();
    if pool.len() < size {
        return Err(PipelineError::InvalidInput(format!(
            "baseline groups of {size} need at least that many non-excluded neurons, {} available",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..r)
        .map(|_| {
            let mut p = pool.clone();
            let (chosen, _) = p.partial_shuffle(&mut rng, size);
            let mut g = chosen.to_vec();
            g.sort_unstable();
            g
        })
        .collect())
}

pub(crate) fn check_group(group: &[usize], n: usize, min: usize) -> Result<(), PipelineError> {
    if group.len() < min {
        return Err(PipelineError::GroupTooSmall { size: group.len(), min });
    }
    if let Some(&i) = group.iter().find(|&&i| i >= n) {
        return Err(PipelineError::InvalidInput(format!("neuron {i} out of range for {n} neurons")));
    }
    let mut sorted = group.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(PipelineError::InvalidInput("group lists a neuron twice".into()));
    }
    Ok(())
}

/// A group statistic set against the same statistic on random groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    #[serde(with = "crate::float_serde")]
    pub group_value: f64,
    #[serde(with = "crate::float_serde::vec")]
    pub baseline_values: Vec<f64>,
    #[serde(with = "crate::float_serde")]
    pub baseline_mean: f64,
    #[serde(with = "crate::float_serde")]
    pub baseline_std: f64,
    /// `None` with fewer than two baselines or non-finite values. When all
    /// baselines are equal the statistic is `0` (p = 1) if the group value
    /// matches them and infinite (p = 0) otherwise.
    pub test: Option<TTest>,
    pub significant: bool,
}

impl BaselineComparison {
    pub fn new(group_value: f64, baseline_values: Vec<f64>) -> Self {
        let n = baseline_values.len() as f64;
        let mean = baseline_values.iter().sum::<f64>() / n;
        let std = if baseline_values.len() > 1 {
            (baseline_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        let test = match single_vs_sample_t(group_value, &baseline_values) {
            Ok(t) => Some(t),
            Err(EstimatorError::DegenerateSample) => {
                let t = if group_value == mean { 0.0 } else { (group_value - mean) * f64::INFINITY };
                Some(TTest {
                    t,
                    df: n - 1.0,
                    p: student_t_two_sided_p(t, n - 1.0),
                })
            }
            Err(_) => None,
        };
        Self {
            group_value,
            baseline_mean: mean,
            baseline_std: std,
            significant: test.is_some_and(|t| t.p < SIGNIFICANCE_LEVEL),
            test,
            baseline_values,
        }
    }

    pub fn difference(&self) -> f64 {
        self.group_value - self.baseline_mean
    }
}
