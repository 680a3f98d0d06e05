use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EstimatorError;

/// Undirected graph as a dense symmetric nonnegative matrix with zero
/// diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: Array2<f64>,
}

impl WeightedGraph {
    pub fn new(weights: Array2<f64>) -> Result<Self, EstimatorError> {
        let (r, c) = weights.dim();
        if r != c {
            return Err(EstimatorError::InvalidGraph(format!("{r}×{c} matrix is not square")));
        }
        for i in 0..r {
            if weights[[i, i]] != 0.0 {
                return Err(EstimatorError::InvalidGraph(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (weights[[i, j]], weights[[j, i]]);
                if !(a.is_finite() && a >= 0.0) {
                    return Err(EstimatorError::InvalidGraph(format!("weight {a} at ({i}, {j})")));
                }
                if a != b {
                    return Err(EstimatorError::InvalidGraph(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self { weights })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.weights.rows().into_iter().map(|r| r.sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Labels contiguous from 0, numbered by first appearance.
    pub community: Vec<usize>,
    pub q: f64,
}

impl Partition {
    pub fn n_communities(&self) -> usize {
        self.community.iter().max().map_or(0, |m| m + 1)
    }

    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.community.len()).filter(|&i| self.community[i] == c).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LouvainConfig {
    pub resolution: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LouvainConfig {
    fn default() -> Self {
        Self {
            resolution: 1.0,
            restarts: 10,
            seed: 0,
        }
    }
}

fn relabel(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}

fn modularity_at(w: &Array2<f64>, labels: &[usize], resolution: f64) -> f64 {
    let n_comm = labels.iter().max().map_or(0, |m| m + 1);
    let mut inside = vec![0.0; n_comm];
    let mut total = vec![0.0; n_comm];
    let mut two_m = 0.0;
    for (i, row) in w.rows().into_iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            two_m += a;
            total[labels[i]] += a;
            if labels[i] == labels[j] {
                inside[labels[i]] += a;
            }
        }
    }
    inside.iter().zip(&total).map(|(i, t)| i / two_m - resolution * (t / two_m).powi(2)).sum()
}

/// Newman modularity `Q = (1/2m) Σ_ij [A_ij − k_i k_j / 2m] δ(c_i, c_j)`.
pub fn modularity(graph: &WeightedGraph, labels: &[usize]) -> Result<f64, EstimatorError> {
    let n = graph.n();
    if labels.len() != n {
        return Err(EstimatorError::LengthMismatch(labels.len(), n));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= n) {
        return Err(EstimatorError::LabelOutOfRange { label, n });
    }
    if graph.weights.sum() <= 0.0 {
        return Err(EstimatorError::EmptyGraph);
    }
    Ok(modularity_at(&graph.weights, labels, 1.0))
}

/// Moves nodes of `w` (which may carry self-loops) between communities,
/// starting from `init`, until no single move raises modularity. Returns
/// the labels and whether any move happened.
///
/// With `randomized`, each node joins a uniformly chosen improving
/// community instead of the best one.
fn local_moves(w: &Array2<f64>, init: &[usize], resolution: f64, randomized: bool, rng: &mut ChaCha8Rng) -> (Vec<usize>, bool) {
    let n = w.nrows();
    let k: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    let two_m: f64 = k.iter().sum();
    let mut label = init.to_vec();
    let mut tot = vec![0.0; n];
    for (i, &c) in label.iter().enumerate() {
        tot[c] += k[i];
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut link = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut improving: Vec<usize> = Vec::new();
    let mut moved_any = false;
    loop {
        let mut moved = false;
        for &i in &order {
            let own = label[i];
            for j in 0..n {
                let a = w[[i, j]];
                if j != i && a > 0.0 {
                    if link[label[j]] == 0.0 {
                        touched.push(label[j]);
                    }
                    link[label[j]] += a;
                }
            }
            tot[own] -= k[i];
            let gain = |c: usize, l: f64| l - resolution * tot[c] * k[i] / two_m;
            let tol = 1e-12 * two_m;
            let stay = gain(own, link[own]);
            let mut best = own;
            if randomized {
                touched.sort_unstable();
                improving.clear();
                improving.extend(touched.iter().copied().filter(|&c| gain(c, link[c]) > stay + tol));
                if !improving.is_empty() {
                    best = improving[rng.random_range(0..improving.len())];
                }
            } else {
                let mut best_gain = stay;
                for &c in &touched {
                    let g = gain(c, link[c]);
                    if g > best_gain + tol {
                        best = c;
                        best_gain = g;
                    }
                }
            }
            tot[best] += k[i];
            if best != own {
                label[i] = best;
                moved = true;
                moved_any = true;
            }
            for &c in &touched {
                link[c] = 0.0;
            }
            link[own] = 0.0;
            touched.clear();
        }
        if !moved {
            break;
        }
    }
    (relabel(&label), moved_any)
}

fn aggregate(w: &Array2<f64>, labels: &[usize]) -> Array2<f64> {
    let n_comm = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Array2::zeros((n_comm, n_comm));
    for (i, row) in w.rows().into_iter().enumerate() {
        for (j, a) in row.iter().enumerate() {
            out[[labels[i], labels[j]]] += a;
        }
    }
    out
}

/// One multilevel run. A `diversify` run starts with a randomized pass at
/// the finest level so that restarts explore different local optima.
fn single_run(graph: &WeightedGraph, resolution: f64, seed: u64, diversify: bool) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..graph.n()).collect();
    if diversify {
        labels = local_moves(&graph.weights, &labels, resolution, true, &mut rng).0;
    }
    loop {
        let mut w = aggregate(&graph.weights, &labels);
        while w.nrows() > 1 {
            let singletons: Vec<usize> = (0..w.nrows()).collect();
            let (level, moved) = local_moves(&w, &singletons, resolution, false, &mut rng);
            if !moved {
                break;
            }
            for l in labels.iter_mut() {
                *l = level[*l];
            }
            w = aggregate(&w, &level);
        }
        // single-node refinement on the original graph; repeat the
        // aggregation if it found an improving move
        let (refined, moved) = local_moves(&graph.weights, &labels, resolution, false, &mut rng);
        if !moved {
            break;
        }
        labels = refined;
    }
    relabel(&labels)
}

/// Louvain community detection. Restart `r` uses seed `seed + r`; restarts
/// after the first begin with a randomized pass. The partition with the
/// highest modularity wins, ties going to the lowest `r`.
pub fn louvain(graph: &WeightedGraph, config: &LouvainConfig) -> Result<Partition, EstimatorError> {
    if graph.n() == 0 || graph.weights.sum() <= 0.0 {
        return Err(EstimatorError::EmptyGraph);
    }
    if !(config.resolution > 0.0 && config.resolution.is_finite()) {
        return Err(EstimatorError::InvalidParameter(format!("resolution {}", config.resolution)));
    }
    let mut runs: Vec<(f64, Vec<usize>)> = (0..config.restarts.max(1) as u64)
        .into_par_iter()
        .map(|r| {
            let labels = single_run(graph, config.resolution, config.seed.wrapping_add(r), r > 0);
            (modularity_at(&graph.weights, &labels, config.resolution), labels)
        })
        .collect();
    let mut best = 0;
    for (r, run) in runs.iter().enumerate() {
        if run.0 > runs[best].0 {
            best = r;
        }
    }
    let community = runs.swap_remove(best).1;
    let q = modularity(graph, &community)?;
    Ok(Partition { community, q })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> WeightedGraph {
        let mut w = Array2::zeros((n, n));
        for &(i, j, a) in edges {
            w[[i, j]] = a;
            w[[j, i]] = a;
        }
        WeightedGraph::new(w).unwrap()
    }

    fn two_triangles() -> WeightedGraph {
        from_edges(6, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0), (3, 4, 1.0), (4, 5, 1.0), (3, 5, 1.0)])
    }

    fn complete(n: usize) -> WeightedGraph {
        let w = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 0.0 } else { 1.0 });
        WeightedGraph::new(w).unwrap()
    }

    /// Literal double sum over node pairs.
    fn brute_q(g: &WeightedGraph, labels: &[usize]) -> f64 {
        let k = g.degrees();
        let two_m: f64 = k.iter().sum();
        let mut q = 0.0;
        for i in 0..g.n() {
            for j in 0..g.n() {
                if labels[i] == labels[j] {
                    q += g.weights[[i, j]] - k[i] * k[j] / two_m;
                }
            }
        }
        q / two_m
    }

    /// Every set partition of `n` nodes as restricted growth strings.
    fn all_partitions(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == n {
                out.push(prefix.clone());
                return;
            }
            let next = prefix.iter().max().map_or(0, |m| m + 1);
            for l in 0..=next {
                prefix.push(l);
                rec(prefix, n, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), n, &mut out);
        out
    }

    fn best_q(g: &WeightedGraph) -> f64 {
        all_partitions(g.n()).iter().map(|p| brute_q(g, p)).fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn two_triangles_split() {
        let g = two_triangles();
        assert_eq!(all_partitions(6).len(), 203);
        assert!((best_q(&g) - 0.5).abs() < 1e-12);
        let p = louvain(&g, &LouvainConfig::default()).unwrap();
        assert_eq!(p.n_communities(), 2);
        assert!((p.q - 0.5).abs() < 1e-12);
        assert!((modularity(&g, &[0, 0, 0, 1, 1, 1]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn complete_graph_has_no_structure() {
        let g = complete(5);
        assert!(best_q(&g).abs() < 1e-12);
        assert_eq!(modularity(&g, &[0; 5]).unwrap(), 0.0);
        let p = louvain(&g, &LouvainConfig::default()).unwrap();
        assert!(p.q <= 1e-12);
    }

    #[test]
    fn trivial_partition_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = Array2::from_shape_fn((9, 9), |_| rng.random::<f64>());
        for i in 0..9 {
            w[[i, i]] = 0.0;
            for j in 0..i {
                w[[i, j]] = w[[j, i]];
            }
        }
        let g = WeightedGraph::new(w).unwrap();
        assert!(modularity(&g, &[0; 9]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn matches_exhaustive_optimum_on_small_graphs() {
        for seed in 0..6 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 8;
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..i {
                    let same = i / 4 == j / 4;
                    let p = if same { 0.8 } else { 0.15 };
                    if rng.random::<f64>() < p {
                        let a = rng.random_range(0.5..1.5);
                        w[[i, j]] = a;
                        w[[j, i]] = a;
                    }
                }
            }
            let g = WeightedGraph::new(w).unwrap();
            if g.weights.sum() == 0.0 {
                continue;
            }
            let best = best_q(&g);
            let p = louvain(&g, &LouvainConfig { seed, ..Default::default() }).unwrap();
            assert!(p.q <= best + 1e-12);
            assert!(p.q >= best - 0.02, "seed {seed}: {} vs {best}", p.q);
        }
    }

    #[test]
    fn planted_blocks_are_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 40;
        let mut w = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..i {
                let p = if i / 10 == j / 10 { 0.9 } else { 0.05 };
                if rng.random::<f64>() < p {
                    w[[i, j]] = 1.0;
                    w[[j, i]] = 1.0;
                }
            }
        }
        let g = WeightedGraph::new(w).unwrap();
        let p = louvain(&g, &LouvainConfig { seed: 7, ..Default::default() }).unwrap();
        let planted: Vec<usize> = (0..n).map(|i| i / 10).collect();
        assert_eq!(p.community, relabel(&planted));
    }

    #[test]
    fn deterministic_given_seed() {
        let g = two_triangles();
        let cfg = LouvainConfig {
            seed: 99,
            restarts: 4,
            ..Default::default()
        };
        assert_eq!(louvain(&g, &cfg).unwrap(), louvain(&g, &cfg).unwrap());
    }

    #[test]
    fn errors() {
        let g = WeightedGraph::new(Array2::zeros((3, 3))).unwrap();
        assert_eq!(louvain(&g, &LouvainConfig::default()), Err(EstimatorError::EmptyGraph));
        assert_eq!(
            modularity(&two_triangles(), &[0, 0, 0, 1, 1, 6]),
            Err(EstimatorError::LabelOutOfRange { label: 6, n: 6 })
        );
        let mut w = Array2::zeros((2, 2));
        w[[0, 1]] = 1.0;
        assert!(WeightedGraph::new(w).is_err());
    }

    proptest! {
        #[test]
        fn modularity_matches_double_sum(seed in 0u64..5000, n in 2usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut w = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..i {
                    let a = rng.random::<f64>();
                    w[[i, j]] = a;
                    w[[j, i]] = a;
                }
            }
            let g = WeightedGraph::new(w).unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let q = modularity(&g, &labels).unwrap();
            prop_assert!((q - brute_q(&g, &labels)).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&q));
            let p = louvain(&g, &LouvainConfig { seed, restarts: 2, ..Default::default() }).unwrap();
            prop_assert!((p.q - brute_q(&g, &p.community)).abs() < 1e-12);
        }
    }
}
