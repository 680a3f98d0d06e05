//! Seeded generators with planted ground truth: toy transformer bundles
//! with rare-token neurons, influence curves, heavy-tailed spectra, block
//! graphs and correlated activations.
//!
//! Every generator is a pure function of its arguments.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Pareto, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{Spectrum, WeightedGraph};
use crate::tensor_io::{names, Activation, ArchDescriptor, ModelBundle, Norm, TensorRecord, TokenStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("stream holds {got} rare-target positions, {needed} required")]
    InfeasibleStream { needed: usize, got: usize },
    #[error("invalid generator parameter: {0}")]
    InvalidSpec(String),
}

pub fn small_arch(n_layers: usize, d_model: usize, d_mlp: usize, n_heads: usize, vocab_size: usize, max_context: usize) -> ArchDescriptor {
    ArchDescriptor {
        n_layers,
        d_model,
        d_mlp,
        n_heads,
        vocab_size,
        max_context,
        activation: Activation::Gelu,
        norm: Norm::PreLayernorm,
        ln_eps: 1e-5,
    }
}

fn gaussian(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect()
}

/// Required tensors plus learned positions, all iid `N(0, scale²)`, drawn
/// in sorted-name order. Layernorm parameters and biases are left at their
/// defaults.
pub fn random_bundle(arch: &ArchDescriptor, scale: f64, seed: u64) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shapes: BTreeMap<String, Vec<usize>> = arch.required_tensors().into_iter().collect();
    shapes.insert(names::POS_EMBED.to_string(), vec![arch.max_context, arch.d_model]);
    let tensors = shapes
        .into_iter()
        .map(|(name, shape)| {
            let data = gaussian(&mut rng, &shape, scale);
            let rec = TensorRecord::f64(name.clone(), shape, data).expect("consistent shape");
            (name, rec)
        })
        .collect();
    ModelBundle::new(arch.clone(), tensors).expect("generated bundle is valid")
}

/// Parameters of a toy model with planted rare-token neurons and the
/// Zipf-distributed evaluation stream that goes with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantSpec {
    pub arch: ArchDescriptor,
    /// Explicit planted indices; when empty, `n_planted` indices are drawn
    /// from the seed.
    pub planted_neurons: Vec<usize>,
    pub n_planted: usize,
    /// Length, in units of `weight_scale`, of the mean rare-token
    /// unembedding direction added to each planted neuron's output column.
    /// Zero leaves them as background.
    pub boost: f64,
    /// Explicit rare token ids; when empty, the least frequent
    /// `rare_fraction` of the non-depleted Zipf ranks are used.
    pub rare_token_set: Vec<u32>,
    pub rare_fraction: f64,
    pub seed: u64,
    pub weight_scale: f64,
    pub pos_scale: f64,
    /// Strength of the feature direction shared by rare-token unembeddings.
    pub rare_feature_gain: f64,
    /// Logit offset given to rare tokens through the final layernorm bias,
    /// so the model assigns them low probability.
    pub rare_logit_bias: f64,
    /// Final-layer output columns are scaled by
    /// `background_gain · rank^(−background_decay)` over a seeded random
    /// ranking, spreading neuron influence over a power law.
    pub background_gain: f64,
    pub background_decay: f64,
    /// Planted neurons' input rows are `c·f + sqrt(1−c²)·own`, with `f`
    /// the rare-token embedding feature scaled to a typical row norm.
    pub input_coupling: f64,
    /// Norm of the feature direction `f` added to every rare token's
    /// embedding, so rare tokens are recognizable in context.
    pub rare_embed_gain: f64,
    /// Probability that a rare token is followed by a token drawn from the
    /// rare set alone. Rare tokens then cluster, making a rare next token
    /// predictable from the current one.
    pub rare_burst: f64,
    pub n_docs: usize,
    pub zipf_exponent: f64,
    /// Zipf–Mandelbrot rank offset `q` in `(r + q)^(−s)`.
    pub zipf_shift: f64,
    /// Fraction of the lowest ranks whose probability is cut by `depletion`,
    /// producing an elbow in the rank-frequency curve.
    pub depleted_fraction: f64,
    pub depletion: f64,
    pub min_rare_positions: usize,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            arch: small_arch(2, 64, 256, 4, 1024, 128),
            planted_neurons: Vec::new(),
            n_planted: 8,
            boost: 5.0,
            rare_token_set: Vec::new(),
            rare_fraction: 0.15,
            seed: 0,
            weight_scale: 0.02,
            pos_scale: 0.01,
            rare_feature_gain: 0.5,
            rare_logit_bias: -5.0,
            background_gain: 3.0,
            background_decay: 1.0,
            input_coupling: 0.9,
            rare_embed_gain: 0.1,
            rare_burst: 0.5,
            n_docs: 196,
            zipf_exponent: 1.1,
            zipf_shift: 10.0,
            depleted_fraction: 0.1,
            depletion: 0.05,
            min_rare_positions: 500,
        }
    }
}

/// Record of what was planted, written next to generated artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantManifest {
    pub spec: PlantSpec,
    pub planted_neurons: Vec<usize>,
    pub rare_tokens: Vec<u32>,
    /// Token id for each Zipf rank, most frequent first.
    pub rank_to_token: Vec<u32>,
    pub rare_target_positions: usize,
    pub n_tokens: usize,
}

pub struct PlantedBundle {
    pub bundle: ModelBundle,
    pub stream: TokenStream,
    pub manifest: PlantManifest,
}

impl PlantedBundle {
    pub fn planted(&self) -> &[usize] {
        &self.manifest.planted_neurons
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if let Err(e) = self.arch.validate() {
            return bad(e.to_string());
        }
        if let Some(&i) = self.planted_neurons.iter().find(|&&i| i >= self.arch.d_mlp) {
            return bad(format!("planted neuron {i} ≥ d_mlp {}", self.arch.d_mlp));
        }
        if self.planted_neurons.is_empty() && self.n_planted > self.arch.d_mlp {
            return bad(format!("{} planted neurons exceed d_mlp {}", self.n_planted, self.arch.d_mlp));
        }
        if let Some(&t) = self.rare_token_set.iter().find(|&&t| t as usize >= self.arch.vocab_size) {
            return bad(format!("rare token {t} outside vocabulary"));
        }
        if !(self.boost >= 0.0 && self.boost.is_finite()) {
            return bad(format!("boost {}", self.boost));
        }
        if !(self.rare_fraction > 0.0 && self.rare_fraction < 1.0) {
            return bad(format!("rare_fraction {}", self.rare_fraction));
        }
        if !(self.depleted_fraction >= 0.0 && self.depleted_fraction < 0.5) || !(self.depletion > 0.0 && self.depletion <= 1.0) {
            return bad("depletion parameters".into());
        }
        if !(0.0..=1.0).contains(&self.input_coupling) {
            return bad(format!("input_coupling {}", self.input_coupling));
        }
        if !(0.0..1.0).contains(&self.rare_burst) || !(self.rare_embed_gain >= 0.0) {
            return bad("rare context parameters".into());
        }
        if !(self.rare_feature_gain > 0.0) || !self.rare_logit_bias.is_finite() || !(self.background_decay >= 0.0) || !(self.background_gain >= 0.0) {
            return bad("feature parameters".into());
        }
        if !(self.zipf_exponent > 0.0) || !(self.zipf_shift >= 0.0) {
            return bad("zipf parameters".into());
        }
        if self.n_docs == 0 {
            return bad("n_docs = 0".into());
        }
        Ok(())
    }
}

/// Toy transformer whose planted final-layer neurons write the shared
/// rare-token direction into the residual stream, plus a Zipf token stream
/// of `n_docs × max_context` tokens.
pub fn make_planted_bundle(spec: &PlantSpec) -> Result<PlantedBundle, SynthError> {
    spec.validate()?;
    let arch = &spec.arch;
    let (v, d, m) = (arch.vocab_size, arch.d_model, arch.d_mlp);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // stream
    let mut rank_to_token: Vec<u32> = (0..v as u32).collect();
    rank_to_token.shuffle(&mut rng);
    let n_keep = v - (spec.depleted_fraction * v as f64).floor() as usize;
    let mut weights: Vec<f64> = (1..=v)
        .map(|r| {
            let p = (r as f64 + spec.zipf_shift).powf(-spec.zipf_exponent);
            if r > n_keep {
                p * spec.depletion
            } else {
                p
            }
        })
        .collect();
    let rare_tokens: Vec<u32> = if spec.rare_token_set.is_empty() {
        let n_rare = ((spec.rare_fraction * n_keep as f64).round() as usize).max(1);
        let mut r = rank_to_token[n_keep - n_rare..n_keep].to_vec();
        r.sort_unstable();
        r
    } else {
        let mut r = spec.rare_token_set.clone();
        r.sort_unstable();
        r.dedup();
        r
    };
    let mut is_rare = vec![false; v];
    for &t in &rare_tokens {
        is_rare[t as usize] = true;
    }

    // bursts would inflate rare frequencies; thinning the unconditional
    // draw keeps the stationary rare mass near its Zipf value
    for (r, w) in weights.iter_mut().enumerate() {
        if is_rare[rank_to_token[r] as usize] {
            *w *= 1.0 - spec.rare_burst;
        }
    }
    let invalid = |e: rand::distr::weighted::Error| SynthError::InvalidSpec(e.to_string());
    let sampler = WeightedIndex::new(&weights).map_err(invalid)?;
    let rare_ranks: Vec<usize> = (0..v).filter(|&r| is_rare[rank_to_token[r] as usize]).collect();
    let rare_sampler = WeightedIndex::new(rare_ranks.iter().map(|&r| weights[r])).map_err(invalid)?;
    let ctx = arch.max_context;
    let n_tokens = spec.n_docs * ctx;
    let mut ids: Vec<u32> = Vec::with_capacity(n_tokens);
    for _ in 0..spec.n_docs {
        let mut prev_rare = false;
        for _ in 0..ctx {
            let rank = if prev_rare && rng.random::<f64>() < spec.rare_burst {
                rare_ranks[rare_sampler.sample(&mut rng)]
            } else {
                sampler.sample(&mut rng)
            };
            let id = rank_to_token[rank];
            prev_rare = is_rare[id as usize];
            ids.push(id);
        }
    }
    let boundaries: Vec<usize> = (0..spec.n_docs).map(|i| i * ctx).collect();
    let stream = TokenStream::new(ids, boundaries, v).expect("generated ids are in range");

    let rare_target_positions: usize = stream
        .windows(ctx)
        .iter()
        .map(|w| w[1..].iter().filter(|&&t| is_rare[t as usize]).count())
        .sum();
    if rare_target_positions < spec.min_rare_positions {
        return Err(SynthError::InfeasibleStream {
            needed: spec.min_rare_positions,
            got: rare_target_positions,
        });
    }

    let planted_neurons: Vec<usize> = if spec.planted_neurons.is_empty() {
        let mut all: Vec<usize> = (0..m).collect();
        all.shuffle(&mut rng);
        let mut p = all[..spec.n_planted].to_vec();
        p.sort_unstable();
        p
    } else {
        let mut p = spec.planted_neurons.clone();
        p.sort_unstable();
        p.dedup();
        p
    };

    // weights
    let mut bundle = random_bundle(arch, spec.weight_scale, rng.random());
    let pos = gaussian(&mut rng, &[ctx, d], spec.pos_scale);
    put(&mut bundle, names::POS_EMBED, vec![ctx, d], pos);

    let mut e = Array1::from(gaussian(&mut rng, &[d], 1.0));
    e /= e.dot(&e).sqrt();
    let mut unembed = bundle.matrix(names::UNEMBED).expect("required").to_owned();
    for (j, mut row) in unembed.rows_mut().into_iter().enumerate() {
        let along = row.dot(&e);
        row.scaled_add(-along, &e);
        if is_rare[j] {
            row.scaled_add(spec.rare_feature_gain, &e);
        }
    }
    let mut rare_mean = Array1::<f64>::zeros(d);
    for &t in &rare_tokens {
        rare_mean += &unembed.row(t as usize);
    }
    rare_mean /= rare_tokens.len() as f64;

    let last = arch.n_layers - 1;
    let w_out_name = names::mlp(last, "w_out");
    let mut w_out = bundle.matrix(&w_out_name).expect("required").to_owned();
    let mut scale_rank: Vec<usize> = (1..=m).collect();
    scale_rank.shuffle(&mut rng);
    for (i, &r) in scale_rank.iter().enumerate() {
        w_out
            .column_mut(i)
            .mapv_inplace(|x| x * spec.background_gain * (r as f64).powf(-spec.background_decay));
    }
    let direction = &rare_mean / rare_mean.dot(&rare_mean).sqrt();
    for &i in &planted_neurons {
        w_out.column_mut(i).scaled_add(spec.boost * spec.weight_scale, &direction);
    }

    // rare tokens share an embedding feature that planted neurons read
    let mut f = Array1::from(gaussian(&mut rng, &[d], 1.0));
    f /= f.dot(&f).sqrt();
    let mut embed = bundle.matrix(names::TOK_EMBED).expect("required").to_owned();
    for &t in &rare_tokens {
        embed.row_mut(t as usize).scaled_add(spec.rare_embed_gain, &f);
    }
    let w_in_name = names::mlp(last, "w_in");
    let mut w_in = bundle.matrix(&w_in_name).expect("required").to_owned();
    let own = (1.0 - spec.input_coupling * spec.input_coupling).sqrt();
    for &i in &planted_neurons {
        let mut row = w_in.row_mut(i);
        row *= own;
        row.scaled_add(spec.input_coupling * spec.weight_scale * (d as f64).sqrt(), &f);
    }

    let ln_f_b = &e * (spec.rare_logit_bias / spec.rare_feature_gain);
    put(&mut bundle, names::LN_F_B, vec![d], ln_f_b.to_vec());
    put(&mut bundle, names::UNEMBED, vec![v, d], unembed.into_raw_vec_and_offset().0);
    put(&mut bundle, &w_out_name, vec![d, m], w_out.into_raw_vec_and_offset().0);
    put(&mut bundle, &w_in_name, vec![m, d], w_in.into_raw_vec_and_offset().0);
    put(&mut bundle, names::TOK_EMBED, vec![v, d], embed.into_raw_vec_and_offset().0);

    Ok(PlantedBundle {
        bundle,
        stream,
        manifest: PlantManifest {
            spec: spec.clone(),
            planted_neurons,
            rare_tokens,
            rank_to_token,
            rare_target_positions,
            n_tokens,
        },
    })
}

fn put(bundle: &mut ModelBundle, name: &str, shape: Vec<usize>, data: Vec<f64>) {
    let rec = TensorRecord::f64(name, shape, data).expect("consistent shape");
    bundle.tensors.insert(name.to_string(), rec);
}

/// Fraction of ranks after which the rapid-decay tail of
/// [`make_regime_curve`] begins.
pub const TAIL_START_FRACTION: f64 = 0.8;

/// Three-regime influence curve over ranks `1..=n`: constant 1.0 through
/// `plateau_n`, then `(r/plateau_n)^(−kappa)`, then exponential decay at
/// `tail_rate` per rank from `0.8·n`. Each value is multiplied by
/// `LogNormal(0, noise)`. `plateau_n = 0` gives a pure `r^(−kappa)` head.
pub fn make_regime_curve(plateau_n: usize, kappa: f64, tail_rate: f64, n: usize, noise: f64, seed: u64) -> Result<Vec<f64>, SynthError> {
    if n == 0 || (plateau_n > 0 && plateau_n * 10 >= n) {
        return Err(SynthError::InvalidSpec(format!("plateau {plateau_n} must be below n/10 = {}", n / 10)));
    }
    if !(kappa >= 0.0) || !(tail_rate >= 0.0) || !(noise >= 0.0) {
        return Err(SynthError::InvalidSpec("kappa, tail_rate and noise must be nonnegative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_dist = LogNormal::new(0.0, noise).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let p = plateau_n.max(1) as f64;
    let tail_start = ((TAIL_START_FRACTION * n as f64).round() as usize).max(plateau_n + 1);
    let at_tail = (tail_start as f64 / p).powf(-kappa);
    Ok((1..=n)
        .map(|r| {
            let clean = if r <= plateau_n {
                1.0
            } else if r <= tail_start {
                (r as f64 / p).powf(-kappa)
            } else {
                at_tail * (-tail_rate * (r - tail_start) as f64).exp()
            };
            if noise > 0.0 {
                clean * noise_dist.sample(&mut rng)
            } else {
                clean
            }
        })
        .collect())
}

/// `n` iid `Pareto(scale 1, shape alpha)` eigenvalues.
pub fn make_pareto_spectrum(alpha: f64, n: usize, seed: u64) -> Result<Spectrum, SynthError> {
    let dist = Pareto::new(1.0, alpha).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ev: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
    Spectrum::new(ev, (n, n)).map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// Stochastic block model with unit edge weights. Returns the graph and the
/// planted block label of each node.
pub fn make_block_graph(blocks: &[usize], p_in: f64, p_out: f64, seed: u64) -> Result<(WeightedGraph, Vec<usize>), SynthError> {
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(SynthError::InvalidSpec(format!("edge probabilities {p_in}, {p_out}")));
    }
    let labels: Vec<usize> = blocks.iter().enumerate().flat_map(|(b, &n)| std::iter::repeat_n(b, n)).collect();
    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            let p = if labels[i] == labels[j] { p_in } else { p_out };
            if rng.random::<f64>() < p {
                w[[i, j]] = 1.0;
                w[[j, i]] = 1.0;
            }
        }
    }
    let g = WeightedGraph::new(w).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok((g, labels))
}

/// `[n × t]` activations in `blocks` equal-as-possible blocks; within a
/// block every pair has correlation `rho`, across blocks 0.
pub fn make_correlated_acts(blocks: usize, rho: f64, n: usize, t: usize, seed: u64) -> Result<(Array2<f64>, Vec<usize>), SynthError> {
    if !(0.0..1.0).contains(&rho) {
        return Err(SynthError::InvalidSpec(format!("rho = {rho} outside [0, 1)")));
    }
    if blocks == 0 || blocks > n {
        return Err(SynthError::InvalidSpec(format!("{blocks} blocks for {n} units")));
    }
    let labels: Vec<usize> = (0..n).map(|i| i * blocks / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let factors = Array2::from_shape_fn((blocks, t), |_| normal.sample(&mut rng));
    let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
    let acts = Array2::from_shape_fn((n, t), |(i, s)| a * factors[[labels[i], s]] + b * normal.sample(&mut rng));
    Ok((acts, labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::{effective_dimension, fix_finger_k, hill_alpha, louvain, modularity, LouvainConfig};

    #[test]
    fn random_bundle_is_seeded() {
        let arch = small_arch(2, 16, 32, 4, 50, 8);
        assert_eq!(random_bundle(&arch, 0.1, 3), random_bundle(&arch, 0.1, 3));
        assert_ne!(random_bundle(&arch, 0.1, 3), random_bundle(&arch, 0.1, 4));
        assert!(random_bundle(&arch, 0.0, 3).tensors.values().all(|t| t.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn planted_bundle_shape_and_determinism() {
        let spec = PlantSpec::default();
        let a = make_planted_bundle(&spec).unwrap();
        let b = make_planted_bundle(&spec).unwrap();
        assert_eq!(a.bundle, b.bundle);
        assert_eq!(a.stream, b.stream);
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.stream.len(), 25_088);
        assert_eq!(a.planted().len(), 8);
        assert!(a.planted().iter().all(|&i| i < 256));
        assert!(a.manifest.rare_target_positions >= 500);
    }

    #[test]
    fn planted_columns_carry_the_rare_direction() {
        let p = make_planted_bundle(&PlantSpec::default()).unwrap();
        let u = p.bundle.matrix(names::UNEMBED).unwrap();
        let w_out = p.bundle.matrix(&names::mlp(1, "w_out")).unwrap();
        let mut rare_mean = Array1::<f64>::zeros(64);
        for &t in &p.manifest.rare_tokens {
            rare_mean += &u.row(t as usize);
        }
        rare_mean /= p.manifest.rare_tokens.len() as f64;
        let cos = |x: ndarray::ArrayView1<f64>| x.dot(&rare_mean) / (x.dot(&x).sqrt() * rare_mean.dot(&rare_mean).sqrt());
        for i in 0..256 {
            let c = cos(w_out.column(i));
            if p.planted().contains(&i) {
                assert!(c > 0.7, "planted {i}: {c}");
            } else {
                assert!(c.abs() < 0.6, "background {i}: {c}");
            }
        }
    }

    #[test]
    fn scarce_rare_tokens_are_infeasible() {
        let spec = PlantSpec {
            n_docs: 2,
            ..Default::default()
        };
        assert!(matches!(make_planted_bundle(&spec), Err(SynthError::InfeasibleStream { .. })));
        let spec = PlantSpec {
            planted_neurons: vec![300],
            ..Default::default()
        };
        assert!(matches!(make_planted_bundle(&spec), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn regime_curve_shape() {
        let c = make_regime_curve(30, 1.0, 0.05, 1000, 0.0, 0).unwrap();
        assert_eq!(c[0], 1.0);
        assert_eq!(c[29], 1.0);
        assert!((c[59] - 0.5).abs() < 1e-15);
        assert!((c[799] - 30.0 / 800.0).abs() < 1e-15);
        assert!(c[999] < c[799] * 1e-4);
        assert_eq!(
            make_regime_curve(30, 1.0, 0.05, 1000, 0.05, 9).unwrap(),
            make_regime_curve(30, 1.0, 0.05, 1000, 0.05, 9).unwrap()
        );
        assert!(make_regime_curve(200, 1.0, 0.05, 1000, 0.0, 0).is_err());
    }

    #[test]
    fn pareto_spectrum_recovery() {
        let mut total = 0.0;
        for seed in 0..20 {
            let s = make_pareto_spectrum(1.5, 2000, seed).unwrap();
            let f = fix_finger_k(&s).unwrap();
            total += hill_alpha(&s, f.k).unwrap().alpha_hill;
        }
        let mean = total / 20.0;
        assert!((1.35..=1.65).contains(&mean), "{mean}");
    }

    #[test]
    fn disconnected_blocks_give_planted_modularity() {
        let (g, labels) = make_block_graph(&[6, 6], 1.0, 0.0, 1).unwrap();
        let p = louvain(&g, &LouvainConfig::default()).unwrap();
        let planted_q = modularity(&g, &labels).unwrap();
        assert!((p.q - planted_q).abs() < 1e-12);
        assert!((planted_q - 0.5).abs() < 1e-12);
    }

    #[test]
    fn equicorrelated_block_is_low_dimensional() {
        let (acts, _) = make_correlated_acts(1, 0.99, 50, 5000, 3).unwrap();
        assert!(effective_dimension(acts.view(), 0.95).unwrap() <= 3);
        assert!(make_correlated_acts(1, 1.0, 5, 10, 0).is_err());
    }
}
