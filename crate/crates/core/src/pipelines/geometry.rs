use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::groups::{check_group, sample_baseline_groups, BaselineComparison};
use super::PipelineError;
use crate::estimators::effective_dimension;

pub const MIN_GEOMETRY_GROUP: usize = 10;
/// Required positions per group member.
pub const POSITIONS_PER_NEURON: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub tau: f64,
    pub baselines: usize,
    pub seed: u64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self {
            tau: 0.95,
            baselines: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    pub group: Vec<usize>,
    pub n_positions: usize,
    pub tau: f64,
    pub d_eff: usize,
    pub baseline_groups: Vec<Vec<usize>>,
    pub baseline_d_eff: Vec<usize>,
    /// `d_eff / |group|` against the same ratio for each baseline group.
    pub ratio: BaselineComparison,
}

fn group_d_eff(acts: ArrayView2<f64>, group: &[usize], tau: f64) -> Result<usize, PipelineError> {
    let rows = acts.select(Axis(1), group).reversed_axes();
    Ok(effective_dimension(rows.view(), tau)?)
}

/// Effective dimension of a neuron group's activations against
/// size-matched random groups drawn from outside `exclude`.
///
/// `acts` is `[positions × neurons]`, already restricted to the positions
/// of interest (rare-token targets in the full pipeline).
pub fn geometry_analysis(acts: ArrayView2<f64>, group: &[usize], exclude: &[usize], cfg: &GeometryConfig) -> Result<GeometryReport, PipelineError> {
    let (n_pos, n) = acts.dim();
    check_group(group, n, MIN_GEOMETRY_GROUP)?;
    let need = POSITIONS_PER_NEURON * group.len();
    if n_pos < need {
        return Err(PipelineError::TooFewPositions { need, got: n_pos });
    }
    let d_eff = group_d_eff(acts, group, cfg.tau)?;
    let baseline_groups = sample_baseline_groups(n, exclude, group.len(), cfg.baselines, cfg.seed)?;
    let baseline_d_eff = baseline_groups
        .par_iter()
        .map(|g| group_d_eff(acts, g, cfg.tau))
        .collect::<Result<Vec<_>, _>>()?;
    let size = group.len() as f64;
    let ratio = BaselineComparison::new(d_eff as f64 / size, baseline_d_eff.iter().map(|&d| d as f64 / size).collect());
    Ok(GeometryReport {
        group: group.to_vec(),
        n_positions: n_pos,
        tau: cfg.tau,
        d_eff,
        baseline_groups,
        baseline_d_eff,
        ratio,
    })
}
