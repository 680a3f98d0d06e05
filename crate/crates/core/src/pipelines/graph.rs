use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::groups::{check_group, sample_baseline_groups, BaselineComparison};
use super::PipelineError;
use crate::estimators::{louvain, mutual_information, LouvainConfig, WeightedGraph, DEFAULT_BINS};

pub const MIN_GRAPH_GROUP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    pub bins: usize,
    pub baselines: usize,
    pub seed: u64,
    pub louvain: LouvainConfig,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            baselines: 20,
            seed: 0,
            louvain: LouvainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommunitySummary {
    pub q: f64,
    pub n_communities: usize,
    pub mean_community_size: f64,
    /// Community of each group member, in group order.
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphReport {
    pub group: Vec<usize>,
    pub n_positions: usize,
    pub bins: usize,
    pub communities: CommunitySummary,
    pub baseline_groups: Vec<Vec<usize>>,
    pub modularity: BaselineComparison,
    pub mean_community_size: BaselineComparison,
}

/// Pairwise mutual-information graph over the listed columns of `acts`
/// (`[positions × neurons]`). Node `k` is `units[k]`.
pub fn mi_graph(acts: ArrayView2<f64>, units: &[usize], bins: usize) -> Result<WeightedGraph, PipelineError> {
    let cols: Vec<Vec<f64>> = units.iter().map(|&u| acts.column(u).to_vec()).collect();
    let n = units.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values = pairs
        .par_iter()
        .map(|&(i, j)| mutual_information(&cols[i], &cols[j], bins))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut w = Array2::zeros((n, n));
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        // the plug-in estimate is nonnegative up to round-off
        let v = v.max(0.0);
        w[[i, j]] = v;
        w[[j, i]] = v;
    }
    Ok(WeightedGraph::new(w)?)
}

fn communities(acts: ArrayView2<f64>, units: &[usize], cfg: &GraphConfig) -> Result<CommunitySummary, PipelineError> {
    let g = mi_graph(acts, units, cfg.bins)?;
    let p = louvain(&g, &cfg.louvain)?;
    let k = p.n_communities();
    Ok(CommunitySummary {
        q: p.q,
        n_communities: k,
        mean_community_size: units.len() as f64 / k as f64,
        labels: p.community,
    })
}

/// Louvain modularity of a group's mutual-information graph against
/// size-matched random groups drawn from outside `exclude`.
pub fn graph_analysis(acts: ArrayView2<f64>, group: &[usize], exclude: &[usize], cfg: &GraphConfig) -> Result<GraphReport, PipelineError> {
    let (n_pos, n) = acts.dim();
    check_group(group, n, MIN_GRAPH_GROUP)?;
    let own = communities(acts, group, cfg)?;
    let baseline_groups = sample_baseline_groups(n, exclude, group.len(), cfg.baselines, cfg.seed)?;
    let baselines = baseline_groups.par_iter().map(|g| communities(acts, g, cfg)).collect::<Result<Vec<_>, _>>()?;
    Ok(GraphReport {
        group: group.to_vec(),
        n_positions: n_pos,
        bins: cfg.bins,
        modularity: BaselineComparison::new(own.q, baselines.iter().map(|c| c.q).collect()),
        mean_community_size: BaselineComparison::new(own.mean_community_size, baselines.iter().map(|c| c.mean_community_size).collect()),
        communities: own,
        baseline_groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_correlated_acts;
    use ndarray::{concatenate, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn iid(t: usize, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, n), |_| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn independent_group_is_indistinguishable_from_baseline() {
        let acts = iid(2000, 40, 1);
        let group: Vec<usize> = (0..10).collect();
        let r = graph_analysis(acts.view(), &group, &group, &GraphConfig::default()).unwrap();
        let p = r.modularity.test.unwrap().p;
        assert!(p > 0.05, "p = {p}, {:?}", r.modularity);
    }

    #[test]
    fn planted_blocks_raise_modularity() {
        let (blocks, labels) = make_correlated_acts(2, 0.8, 10, 2000, 3).unwrap();
        let acts = concatenate(Axis(1), &[blocks.t(), iid(2000, 30, 4).view()]).unwrap();
        let group: Vec<usize> = (0..10).collect();
        let r = graph_analysis(acts.view(), &group, &group, &GraphConfig::default()).unwrap();
        assert!(r.modularity.significant && r.modularity.difference() > 0.0, "{:?}", r.modularity);
        assert_eq!(r.communities.n_communities, 2);
        let same = |a: usize, b: usize| r.communities.labels[a] == r.communities.labels[b];
        for a in 0..10 {
            for b in 0..10 {
                assert_eq!(same(a, b), labels[a] == labels[b]);
            }
        }
    }

    #[test]
    fn graph_is_symmetric_with_zero_diagonal() {
        let acts = iid(400, 5, 9);
        let g = mi_graph(acts.view(), &[4, 0, 2], 8).unwrap();
        let w = g.weights();
        assert_eq!(w.dim(), (3, 3));
        for i in 0..3 {
            assert_eq!(w[[i, i]], 0.0);
            for j in 0..3 {
                assert_eq!(w[[i, j]], w[[j, i]]);
            }
        }
        let col = |k: usize| acts.column(k).to_vec();
        assert_eq!(w[[0, 1]], mutual_information(&col(4), &col(0), 8).unwrap());
    }

    #[test]
    fn small_groups_are_rejected() {
        let acts = iid(400, 20, 0);
        assert!(matches!(
            graph_analysis(acts.view(), &[1, 2, 3], &[], &GraphConfig::default()),
            Err(PipelineError::GroupTooSmall { size: 3, min: 10 })
        ));
    }
}
