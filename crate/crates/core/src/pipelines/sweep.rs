use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{mean_activation, FinalLayerProbe, ForwardOptions, Model};
use crate::tensor_io::TokenStream;
use crate::token_stats::{TokenClass, TokenClassSplit};

/// Per-position absolute loss changes for every final-layer neuron.
///
/// Computing these once lets several token-class splits be summarized
/// without repeating the forward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationDiffs {
    /// Prediction target of each evaluated position, in stream order.
    pub targets: Vec<u32>,
    /// `|L_base − L_ablated|`, `[positions × d_mlp]`.
    pub diffs: Array2<f64>,
    pub baseline_loss: Vec<f64>,
    pub mean_activation: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronRecord {
    pub neuron_index: usize,
    pub delta_loss_rare: f64,
    pub delta_loss_common: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSizes {
    pub rare_positions: usize,
    pub common_positions: usize,
    pub excluded_positions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepClass {
    Rare,
    Common,
}

impl SweepClass {
    pub fn token_class(self) -> TokenClass {
        match self {
            SweepClass::Rare => TokenClass::Rare,
            SweepClass::Common => TokenClass::Common,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SweepClass::Rare => "rare",
            SweepClass::Common => "common",
        }
    }
}

impl std::str::FromStr for SweepClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rare" => Ok(SweepClass::Rare),
            "common" => Ok(SweepClass::Common),
            other => Err(format!("unknown token class {other:?} (expected rare or common)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSweepResult {
    /// Indexed by neuron.
    pub records: Vec<NeuronRecord>,
    pub class_sizes: ClassSizes,
    /// Neuron indices by descending rare-class Δloss, ties by index.
    pub ranking_rare: Vec<usize>,
    pub ranking_common: Vec<usize>,
}

impl AblationSweepResult {
    pub fn delta(&self, class: SweepClass, neuron: usize) -> f64 {
        let r = &self.records[neuron];
        match class {
            SweepClass::Rare => r.delta_loss_rare,
            SweepClass::Common => r.delta_loss_common,
        }
    }

    pub fn ranking(&self, class: SweepClass) -> &[usize] {
        match class {
            SweepClass::Rare => &self.ranking_rare,
            SweepClass::Common => &self.ranking_common,
        }
    }

    /// Rebuilds rankings from per-neuron records, e.g. read back from CSV.
    pub fn from_records(mut records: Vec<NeuronRecord>, class_sizes: ClassSizes) -> Result<Self, PipelineError> {
        records.sort_by_key(|r| r.neuron_index);
        if records.iter().enumerate().any(|(i, r)| r.neuron_index != i) {
            return Err(PipelineError::InvalidInput("neuron indices must be 0..n without gaps".into()));
        }
        if records.iter().any(|r| !(r.delta_loss_rare >= 0.0 && r.delta_loss_common >= 0.0)) {
            return Err(PipelineError::InvalidInput("influence values must be nonnegative".into()));
        }
        let rare: Vec<f64> = records.iter().map(|r| r.delta_loss_rare).collect();
        let common: Vec<f64> = records.iter().map(|r| r.delta_loss_common).collect();
        Ok(Self {
            records,
            class_sizes,
            ranking_rare: rank_descending(&rare),
            ranking_common: rank_descending(&common),
        })
    }

    /// Δloss values in ranking order (descending).
    pub fn curve(&self, class: SweepClass) -> Vec<f64> {
        self.ranking(class).iter().map(|&i| self.delta(class, i)).collect()
    }
}

fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Mean-ablates every final-layer neuron over every window of `stream`
/// and records the absolute per-position loss change.
///
/// The mean activation is taken over the same stream. Windows run in
/// sequence and neurons in parallel, so results do not depend on the
/// thread count.
pub fn ablation_diffs(model: &Model, stream: &TokenStream) -> Result<AblationDiffs, PipelineError> {
    if stream.vocab_size > model.arch().vocab_size {
        return Err(PipelineError::VocabMismatch {
            stream: stream.vocab_size,
            model: model.arch().vocab_size,
        });
    }
    let mean = mean_activation(model, stream)?;
    let probe = FinalLayerProbe::new(model);
    let n = probe.n_neurons();
    let windows = stream.windows(model.arch().max_context);
    let n_pos: usize = windows.iter().map(|w| w.len() - 1).sum();
    let mut diffs = Array2::<f64>::zeros((n_pos, n));
    let mut targets = Vec::with_capacity(n_pos);
    let mut baseline_loss = Vec::with_capacity(n_pos);
    let opts = ForwardOptions { capture_attention: false };
    let q_rows: Vec<_> = (0..n).map(|i| probe.neuron_row(i)).collect();
    let mut offset = 0;
    for w in windows {
        let len = w.len() - 1;
        if len == 0 {
            continue;
        }
        let trace = model.forward_with(w, &[], opts)?;
        let state = probe.window(trace.resid_final.view());
        let base: Vec<f64> = (0..len).map(|t| probe.loss(&state, t, 0, q_rows[0].view(), 0.0, w[t + 1] as usize)).collect();
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                (0..len)
                    .map(|t| {
                        let delta = mean[i] - trace.mlp_acts[[t, i]];
                        let ablated = probe.loss(&state, t, i, q_rows[i].view(), delta, w[t + 1] as usize);
                        (base[t] - ablated).abs()
                    })
                    .collect()
            })
            .collect();
        for (i, col) in cols.iter().enumerate() {
            for (t, v) in col.iter().enumerate() {
                diffs[[offset + t, i]] = *v;
            }
        }
        targets.extend_from_slice(&w[1..]);
        baseline_loss.extend(base);
        offset += len;
    }
    Ok(AblationDiffs {
        targets,
        diffs,
        baseline_loss,
        mean_activation: mean.to_vec(),
    })
}

impl AblationDiffs {
    /// Per-neuron mean Δloss over positions whose target falls in each class.
    pub fn summarize(&self, split: &TokenClassSplit) -> Result<AblationSweepResult, PipelineError> {
        let n = self.diffs.ncols();
        let mut rare = vec![0.0; n];
        let mut common = vec![0.0; n];
        let mut sizes = ClassSizes {
            rare_positions: 0,
            common_positions: 0,
            excluded_positions: 0,
        };
        for (row, &t) in self.diffs.rows().into_iter().zip(&self.targets) {
            let acc = match split.class_of(t) {
                TokenClass::Rare => {
                    sizes.rare_positions += 1;
                    &mut rare
                }
                TokenClass::Common => {
                    sizes.common_positions += 1;
                    &mut common
                }
                TokenClass::Excluded => {
                    sizes.excluded_positions += 1;
                    continue;
                }
            };
            for (a, v) in acc.iter_mut().zip(row.iter()) {
                *a += v;
            }
        }
        if sizes.rare_positions == 0 {
            return Err(PipelineError::EmptyTokenClass("rare"));
        }
        if sizes.common_positions == 0 {
            return Err(PipelineError::EmptyTokenClass("common"));
        }
        for v in &mut rare {
            *v /= sizes.rare_positions as f64;
        }
        for v in &mut common {
            *v /= sizes.common_positions as f64;
        }
        let records = (0..n)
            .map(|i| NeuronRecord {
                neuron_index: i,
                delta_loss_rare: rare[i],
                delta_loss_common: common[i],
            })
            .collect();
        Ok(AblationSweepResult {
            records,
            class_sizes: sizes,
            ranking_rare: rank_descending(&rare),
            ranking_common: rank_descending(&common),
        })
    }

    /// Mask of positions whose target is in `class`.
    pub fn class_positions(&self, split: &TokenClassSplit, class: TokenClass) -> Vec<usize> {
        (0..self.targets.len()).filter(|&p| split.class_of(self.targets[p]) == class).collect()
    }
}

/// Mean-ablation influence of every final-layer neuron on rare- and
/// common-target losses.
pub fn ablation_sweep(model: &Model, stream: &TokenStream, split: &TokenClassSplit) -> Result<AblationSweepResult, PipelineError> {
    if split.vocab_size() != model.arch().vocab_size {
        return Err(PipelineError::VocabMismatch {
            stream: split.vocab_size(),
            model: model.arch().vocab_size,
        });
    }
    ablation_diffs(model, stream)?.summarize(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{token_loss, Intervention};
    use crate::synth::{random_bundle, small_arch};
    use crate::tensor_io::{names, TensorRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Model, TokenStream, TokenClassSplit) {
        let arch = small_arch(2, 16, 32, 4, 40, 12);
        let model = Model::new(&random_bundle(&arch, 0.3, 8));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ids: Vec<u32> = (0..60).map(|_| (40.0 * rng.random::<f64>().powi(2)) as u32).collect();
        let stream = TokenStream::new(ids, vec![0, 25], 40).unwrap();
        let freq = crate::token_stats::count_frequencies(&stream, 40);
        // low ids dominate the skewed draw
        let split = TokenClassSplit {
            freq,
            elbow_rank: 40,
            percentile: 0.3,
            rare_threshold: 0.0,
            classes: (0..40).map(|t| if t < 12 { TokenClass::Common } else { TokenClass::Rare }).collect(),
        };
        (model, stream, split)
    }

    #[test]
    fn matches_explicit_forward_passes() {
        let (model, stream, split) = fixture();
        let result = ablation_sweep(&model, &stream, &split).unwrap();
        let mean = mean_activation(&model, &stream).unwrap();
        for neuron in [0usize, 17, 31] {
            let (mut rare, mut nr, mut common, mut nc) = (0.0, 0, 0.0, 0);
            for w in stream.windows(12) {
                let base = token_loss(&model.forward(w, &[]).unwrap(), w).unwrap();
                let iv = [Intervention::MeanAblateNeuron {
                    index: neuron,
                    mean: mean[neuron],
                }];
                let abl = token_loss(&model.forward(w, &iv).unwrap(), w).unwrap();
                for t in 0..w.len() - 1 {
                    let d = (base[t] - abl[t]).abs();
                    match split.class_of(w[t + 1]) {
                        TokenClass::Rare => {
                            rare += d;
                            nr += 1;
                        }
                        TokenClass::Common => {
                            common += d;
                            nc += 1;
                        }
                        TokenClass::Excluded => {}
                    }
                }
            }
            let r = result.records[neuron];
            assert!((r.delta_loss_rare - rare / nr as f64).abs() < 1e-10);
            assert!((r.delta_loss_common - common / nc as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn constant_neuron_has_zero_influence() {
        let (_, stream, split) = fixture();
        let arch = small_arch(2, 16, 32, 4, 40, 12);
        let mut bundle = random_bundle(&arch, 0.3, 8);
        // neuron 5 never fires: zero input weights and a strongly negative bias
        let mut w_in = bundle.matrix(&names::mlp(1, "w_in")).unwrap().to_owned();
        w_in.row_mut(5).fill(0.0);
        let mut b_in = vec![0.0; 32];
        b_in[5] = -50.0;
        bundle.tensors.insert(
            names::mlp(1, "w_in"),
            TensorRecord::f64(names::mlp(1, "w_in"), vec![32, 16], w_in.into_raw_vec_and_offset().0).unwrap(),
        );
        bundle
            .tensors
            .insert(names::mlp(1, "b_in"), TensorRecord::f64(names::mlp(1, "b_in"), vec![32], b_in).unwrap());
        let model = Model::new(&bundle);
        let r = ablation_sweep(&model, &stream, &split).unwrap();
        assert_eq!(r.records[5].delta_loss_rare, 0.0);
        assert_eq!(r.records[5].delta_loss_common, 0.0);
    }

    #[test]
    fn ranking_is_a_permutation_with_index_ties() {
        assert_eq!(rank_descending(&[1.0, 3.0, 1.0, 3.0, 0.0]), vec![1, 3, 0, 2, 4]);
        let (model, stream, split) = fixture();
        let r = ablation_sweep(&model, &stream, &split).unwrap();
        let mut sorted = r.ranking_rare.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..32).collect::<Vec<_>>());
        assert!(r.records.iter().all(|x| x.delta_loss_rare >= 0.0 && x.delta_loss_common >= 0.0));
        let c = r.curve(SweepClass::Rare);
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (model, stream, split) = fixture();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| ablation_sweep(&model, &stream, &split).unwrap());
        let b = four.install(|| ablation_sweep(&model, &stream, &split).unwrap());
        assert_eq!(a, b);
    }
}
