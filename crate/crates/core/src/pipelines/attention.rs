use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::groups::{check_group, final_activations, sample_baseline_groups, BaselineComparison, PositionActivations, SIGNIFICANCE_LEVEL};
use super::PipelineError;
use crate::estimators::{gini, spearman, welch_t, TTest};
use crate::model::{ForwardOptions, Intervention, Model};
use crate::tensor_io::TokenStream;
use crate::token_stats::{TokenClass, TokenClassSplit};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub baselines: usize,
    pub seed: u64,
    /// Relative key offsets `0..max_offset` enter the attention profile.
    pub max_offset: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            baselines: 20,
            seed: 0,
            max_offset: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConcentration {
    pub layer: usize,
    pub head: usize,
    pub gini_rare: f64,
    pub gini_common: f64,
    pub n_rare: usize,
    pub n_common: usize,
    /// Welch test between the rare- and common-query Gini values.
    pub test: Option<TTest>,
    pub significant: bool,
    /// Spearman correlation of the rare and common mean attention-offset
    /// profiles; `None` when either profile is constant.
    pub profile_spearman: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadImpact {
    pub layer: usize,
    /// `None` for the all-heads ablation of `layer`.
    pub head: Option<usize>,
    /// Relative L2 change of the group's activations, against the same
    /// quantity for random groups.
    pub impact: BaselineComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionReport {
    pub layers: Vec<usize>,
    pub group: Vec<usize>,
    pub n_rare_positions: usize,
    pub heads: Vec<HeadConcentration>,
    pub gini_rare_mean: f64,
    pub gini_rare_std: f64,
    pub gini_common_mean: f64,
    pub gini_common_std: f64,
    /// Welch test between per-head rare and common mean Gini values.
    pub gini_test: Option<TTest>,
    pub spearman_mean: Option<f64>,
    pub spearman_std: Option<f64>,
    pub head_impacts: Vec<HeadImpact>,
    /// Index into `head_impacts` of the head with the largest group impact.
    pub most_influential: usize,
    /// Index into `head_impacts` of a seeded uniformly chosen head.
    pub random_head: usize,
    pub all_heads: Vec<HeadImpact>,
    /// Per layer: zeroing all heads at once gave bit-identical activations
    /// to zeroing each head individually in one run.
    pub all_heads_equals_composition: Vec<bool>,
    /// Per layer: the all-heads impact is at least every single-head impact.
    pub all_heads_dominates: Vec<bool>,
}

/// Accumulated attention statistics of one head over a window.
#[derive(Clone)]
struct HeadAcc {
    gini: [Vec<f64>; 2],
    offset_sum: [Vec<f64>; 2],
    offset_count: [Vec<usize>; 2],
}

impl HeadAcc {
    fn new(max_offset: usize) -> Self {
        Self {
            gini: [Vec::new(), Vec::new()],
            offset_sum: [vec![0.0; max_offset], vec![0.0; max_offset]],
            offset_count: [vec![0; max_offset], vec![0; max_offset]],
        }
    }

    fn absorb(&mut self, other: HeadAcc) {
        for c in 0..2 {
            self.gini[c].extend(other.gini[c].iter());
            for (a, b) in self.offset_sum[c].iter_mut().zip(&other.offset_sum[c]) {
                *a += b;
            }
            for (a, b) in self.offset_count[c].iter_mut().zip(&other.offset_count[c]) {
                *a += b;
            }
        }
    }

    fn profile(&self, c: usize) -> Vec<Option<f64>> {
        self.offset_sum[c]
            .iter()
            .zip(&self.offset_count[c])
            .map(|(s, &n)| (n > 0).then(|| s / n as f64))
            .collect()
    }
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let s = if x.len() > 1 {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, s)
}

/// Per-head Gini concentration and offset profiles, split by the class of
/// each query position's target. Queries with a single visible key carry
/// no concentration information and are skipped.
fn concentration(model: &Model, stream: &TokenStream, split: &TokenClassSplit, layers: &[usize], max_offset: usize) -> Result<Vec<HeadAcc>, PipelineError> {
    let n_heads = model.arch().n_heads;
    let windows = stream.windows(model.arch().max_context);
    let opts = ForwardOptions { capture_attention: true };
    let per_window = windows
        .par_iter()
        .map(|w| {
            let trace = model.forward_with(w, &[], opts)?;
            let mut accs = vec![HeadAcc::new(max_offset); layers.len() * n_heads];
            for (li, &l) in layers.iter().enumerate() {
                for h in 0..n_heads {
                    let a = trace.attention(l, h).expect("attention captured");
                    let acc = &mut accs[li * n_heads + h];
                    for i in 1..w.len().saturating_sub(1) {
                        let c = match split.class_of(w[i + 1]) {
                            TokenClass::Rare => 0,
                            TokenClass::Common => 1,
                            TokenClass::Excluded => continue,
                        };
                        let row = a.row(i);
                        acc.gini[c].push(gini(&row.as_slice().expect("row-major")[..=i])?);
                        for o in 0..=i.min(max_offset.saturating_sub(1)) {
                            acc.offset_sum[c][o] += row[i - o];
                            acc.offset_count[c][o] += 1;
                        }
                    }
                }
            }
            Ok(accs)
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let mut total = vec![HeadAcc::new(max_offset); layers.len() * n_heads];
    for accs in per_window {
        for (t, a) in total.iter_mut().zip(accs) {
            t.absorb(a);
        }
    }
    Ok(total)
}

fn impact(base: &Array2<f64>, ablated: &Array2<f64>, positions: &[usize], group: &[usize]) -> Result<f64, PipelineError> {
    let mut num = 0.0;
    let mut den = 0.0;
    for &p in positions {
        for &g in group {
            let b = base[[p, g]];
            num += (b - ablated[[p, g]]).powi(2);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(PipelineError::InvalidInput("group activations are identically zero".into()));
    }
    Ok((num / den).sqrt())
}

fn impact_record(
    layer: usize,
    head: Option<usize>,
    base: &PositionActivations,
    ablated: &PositionActivations,
    positions: &[usize],
    group: &[usize],
    baseline_groups: &[Vec<usize>],
) -> Result<HeadImpact, PipelineError> {
    let own = impact(&base.acts, &ablated.acts, positions, group)?;
    let baselines = baseline_groups
        .iter()
        .map(|g| impact(&base.acts, &ablated.acts, positions, g))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(HeadImpact {
        layer,
        head,
        impact: BaselineComparison::new(own, baselines),
    })
}

/// Attention routing toward a neuron group in the last two layers:
/// concentration of rare- versus common-target attention, similarity of
/// their offset profiles, and the group's sensitivity to zeroing heads.
/// Impacts are measured on rare-target positions and compared with random
/// groups drawn from outside `exclude`.
pub fn attention_analysis(
    model: &Model,
    stream: &TokenStream,
    split: &TokenClassSplit,
    group: &[usize],
    exclude: &[usize],
    cfg: &AttentionConfig,
) -> Result<AttentionReport, PipelineError> {
    let arch = model.arch();
    if arch.n_layers < 2 {
        return Err(PipelineError::TooFewLayers(arch.n_layers));
    }
    check_group(group, arch.d_mlp, 1)?;
    let layers = vec![arch.n_layers - 2, arch.n_layers - 1];
    let n_heads = arch.n_heads;

    let accs = concentration(model, stream, split, &layers, cfg.max_offset)?;
    let mut heads = Vec::new();
    for (li, &l) in layers.iter().enumerate() {
        for h in 0..n_heads {
            let acc = &accs[li * n_heads + h];
            let [rare, common] = &acc.gini;
            if rare.is_empty() {
                return Err(PipelineError::EmptyTokenClass("rare"));
            }
            if common.is_empty() {
                return Err(PipelineError::EmptyTokenClass("common"));
            }
            let test = welch_t(rare, common).ok();
            let (pr, pc) = (acc.profile(0), acc.profile(1));
            let (x, y): (Vec<f64>, Vec<f64>) = pr.iter().zip(&pc).filter_map(|(a, b)| Some(((*a)?, (*b)?))).unzip();
            heads.push(HeadConcentration {
                layer: l,
                head: h,
                gini_rare: mean_std(rare).0,
                gini_common: mean_std(common).0,
                n_rare: rare.len(),
                n_common: common.len(),
                significant: test.is_some_and(|t| t.p < SIGNIFICANCE_LEVEL),
                test,
                profile_spearman: spearman(&x, &y).ok(),
            });
        }
    }
    let rare_means: Vec<f64> = heads.iter().map(|h| h.gini_rare).collect();
    let common_means: Vec<f64> = heads.iter().map(|h| h.gini_common).collect();
    let (gini_rare_mean, gini_rare_std) = mean_std(&rare_means);
    let (gini_common_mean, gini_common_std) = mean_std(&common_means);
    let rs: Vec<f64> = heads.iter().filter_map(|h| h.profile_spearman).collect();
    let (spearman_mean, spearman_std) = if rs.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&rs);
        (Some(m), Some(s))
    };

    let base = final_activations(model, stream, &[])?;
    let positions = base.class_positions(split, TokenClass::Rare);
    if positions.is_empty() {
        return Err(PipelineError::EmptyTokenClass("rare"));
    }
    let baseline_groups = sample_baseline_groups(arch.d_mlp, exclude, group.len(), cfg.baselines, cfg.seed)?;
    let mut head_impacts = Vec::new();
    for &l in &layers {
        for h in 0..n_heads {
            let ablated = final_activations(model, stream, &[Intervention::ZeroHead { layer: l, head: h }])?;
            head_impacts.push(impact_record(l, Some(h), &base, &ablated, &positions, group, &baseline_groups)?);
        }
    }
    let mut all_heads = Vec::new();
    let mut equals = Vec::new();
    let mut dominates = Vec::new();
    for &l in &layers {
        let all = final_activations(model, stream, &[Intervention::ZeroAllHeads { layer: l }])?;
        let composed: Vec<Intervention> = (0..n_heads).map(|head| Intervention::ZeroHead { layer: l, head }).collect();
        let composed = final_activations(model, stream, &composed)?;
        equals.push(all.acts == composed.acts);
        let rec = impact_record(l, None, &base, &all, &positions, group, &baseline_groups)?;
        dominates.push(
            head_impacts
                .iter()
                .filter(|h| h.layer == l)
                .all(|h| rec.impact.group_value >= h.impact.group_value),
        );
        all_heads.push(rec);
    }

    let most_influential = (0..head_impacts.len())
        .max_by(|&a, &b| {
            head_impacts[a]
                .impact
                .group_value
                .total_cmp(&head_impacts[b].impact.group_value)
                .then(b.cmp(&a))
        })
        .expect("at least one head");
    let random_head = ChaCha8Rng::seed_from_u64(cfg.seed).random_range(0..head_impacts.len());

    Ok(AttentionReport {
        layers,
        group: group.to_vec(),
        n_rare_positions: positions.len(),
        heads,
        gini_rare_mean,
        gini_rare_std,
        gini_common_mean,
        gini_common_std,
        gini_test: welch_t(&rare_means, &common_means).ok(),
        spearman_mean,
        spearman_std,
        head_impacts,
        most_influential,
        random_head,
        all_heads,
        all_heads_equals_composition: equals,
        all_heads_dominates: dominates,
    })
}

/// Relative L2 change of `group`'s activations over `positions` between two
/// activation tables.
pub fn group_impact(base: &PositionActivations, ablated: &PositionActivations, positions: &[usize], group: &[usize]) -> Result<f64, PipelineError> {
    impact(&base.acts, &ablated.acts, positions, group)
}
