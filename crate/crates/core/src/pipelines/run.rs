use serde::{Deserialize, Serialize};

use super::attention::{attention_analysis, AttentionConfig, AttentionReport};
use super::geometry::{geometry_analysis, GeometryConfig, GeometryReport, MIN_GEOMETRY_GROUP};
use super::graph::{graph_analysis, GraphConfig, GraphReport, MIN_GRAPH_GROUP};
use super::groups::final_activations;
use super::regimes::{segment_regimes, RegimeSegmentation, RegimeThresholds};
use super::spectral::{spectral_analysis, SpectralConfig, SpectralReport, WeightChoice, MIN_SPECTRAL_GROUP};
use super::sweep::{ablation_diffs, AblationSweepResult, SweepClass};
use super::PipelineError;
use crate::estimators::{LouvainConfig, DEFAULT_BINS};
use crate::model::Model;
use crate::tensor_io::TokenStream;
use crate::token_stats::{
    count_frequencies, detect_elbow, sorted_log_frequency, split_classes, TokenClass, TokenClassSplit, DEFAULT_ELBOW_WINDOW, DEFAULT_PERCENTILE,
};
use crate::{Error, Stage, StageExt};

/// The four group analyses, each switchable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSet {
    pub geometry: bool,
    pub graph: bool,
    pub attention: bool,
    pub spectral: bool,
}

impl Default for AnalysisSet {
    fn default() -> Self {
        Self::all()
    }
}

impl AnalysisSet {
    pub fn all() -> Self {
        Self {
            geometry: true,
            graph: true,
            attention: true,
            spectral: true,
        }
    }

    pub fn none() -> Self {
        Self {
            geometry: false,
            graph: false,
            attention: false,
            spectral: false,
        }
    }

    /// Names of the enabled analyses, in pipeline order.
    pub fn enabled(&self) -> Vec<&'static str> {
        [
            ("geometry", self.geometry),
            ("graph", self.graph),
            ("attention", self.attention),
            ("spectral", self.spectral),
        ]
        .into_iter()
        .filter_map(|(n, on)| on.then_some(n))
        .collect()
    }
}

/// Every numeric knob of a run except the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub percentile: f64,
    pub elbow_window: usize,
    /// Extra rare percentiles whose plateau sets are compared with the
    /// main one. They reuse the sweep's per-position loss changes.
    pub robustness_percentiles: Vec<f64>,
    pub regimes: RegimeThresholds,
    pub tau: f64,
    pub bins: usize,
    pub baselines: usize,
    pub louvain_restarts: usize,
    pub spectral_weights: WeightChoice,
    pub max_offset: usize,
    pub analyses: AnalysisSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            percentile: DEFAULT_PERCENTILE,
            elbow_window: DEFAULT_ELBOW_WINDOW,
            robustness_percentiles: vec![0.10, 0.20],
            regimes: RegimeThresholds::default(),
            tau: 0.95,
            bins: DEFAULT_BINS,
            baselines: 20,
            louvain_restarts: LouvainConfig::default().restarts,
            spectral_weights: WeightChoice::WIn,
            max_offset: 128,
            analyses: AnalysisSet::all(),
        }
    }
}

impl PipelineConfig {
    /// Range checks; the message names the offending key.
    pub fn validate(&self) -> Result<(), String> {
        let unit = |p: f64| p > 0.0 && p < 1.0;
        if !unit(self.percentile) {
            return Err(format!("percentile = {} must lie in (0, 1)", self.percentile));
        }
        if let Some(p) = self.robustness_percentiles.iter().find(|p| !unit(**p)) {
            return Err(format!("robustness_percentiles entry {p} must lie in (0, 1)"));
        }
        if self.elbow_window < 3 || self.elbow_window.is_multiple_of(2) {
            return Err(format!("elbow_window = {} must be odd and at least 3", self.elbow_window));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau = {} must lie in (0, 1]", self.tau));
        }
        if self.bins < 2 {
            return Err(format!("bins = {} must be at least 2", self.bins));
        }
        if self.baselines < 10 {
            return Err(format!("baselines = {} must be at least 10", self.baselines));
        }
        if self.louvain_restarts == 0 {
            return Err("louvain_restarts must be positive".into());
        }
        if self.max_offset == 0 {
            return Err("max_offset must be positive".into());
        }
        let r = &self.regimes;
        if !(r.plateau_slope_max > 0.0) || !(r.gap_min > 1.0) || !(r.tail_slope_ratio > 1.0) {
            return Err("regimes: plateau_slope_max must be positive, gap_min and tail_slope_ratio above 1".into());
        }
        if r.min_plateau == 0 || r.min_middle < 2 || r.min_tail < 2 {
            return Err("regimes: segments need at least 1, 2 and 2 ranks".into());
        }
        if self.analyses == AnalysisSet::none() {
            return Err("analyses: at least one analysis must be enabled".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenClassSummary {
    pub vocab_size: usize,
    pub elbow_rank: usize,
    pub elbow_found: bool,
    pub percentile: f64,
    pub rare_threshold: f64,
    pub rare_tokens: usize,
    pub common_tokens: usize,
    pub excluded_tokens: usize,
}

impl TokenClassSummary {
    fn new(split: &TokenClassSplit, elbow_found: bool) -> Self {
        Self {
            vocab_size: split.vocab_size(),
            elbow_rank: split.elbow_rank,
            elbow_found,
            percentile: split.percentile,
            rare_threshold: split.rare_threshold,
            rare_tokens: split.count(TokenClass::Rare),
            common_tokens: split.count(TokenClass::Common),
            excluded_tokens: split.count(TokenClass::Excluded),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRegimes {
    pub rare: RegimeSegmentation,
    pub common: RegimeSegmentation,
}

/// Plateau set under another rare percentile, and its agreement with the
/// main one: `|A ∩ B| / max(|A|, |B|)`, or 1 when both are empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauOverlap {
    pub percentile: f64,
    pub plateau_set: Vec<usize>,
    pub overlap: f64,
}

pub fn plateau_overlap(a: &[usize], b: &[usize]) -> f64 {
    let larger = a.len().max(b.len());
    if larger == 0 {
        return 1.0;
    }
    a.iter().filter(|i| b.contains(i)).count() as f64 / larger as f64
}

/// The neuron group handed to one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisGroup {
    pub analysis: String,
    pub neurons: Vec<usize>,
    /// How many members come from the detected plateau.
    pub plateau_members: usize,
    /// The plateau was topped up with the next rare-ranked neurons to
    /// reach the analysis minimum.
    pub extended: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResults {
    pub token_classes: TokenClassSummary,
    /// Absent when the group was supplied by the caller.
    pub sweep: Option<AblationSweepResult>,
    pub regimes: Option<ClassRegimes>,
    /// A plateau was detected for rare targets and not for common ones.
    pub rare_only_plateau: Option<bool>,
    pub robustness: Vec<PlateauOverlap>,
    pub groups: Vec<AnalysisGroup>,
    pub geometry: Option<GeometryReport>,
    pub graph: Option<GraphReport>,
    pub attention: Option<AttentionReport>,
    pub spectral: Option<SpectralReport>,
}

/// Group for an analysis: the plateau, or the top `min` rare-ranked
/// neurons when the plateau is smaller.
fn choose_group(analysis: &str, ranking: &[usize], plateau: usize, min: usize) -> AnalysisGroup {
    let size = plateau.max(min).min(ranking.len());
    let mut neurons = ranking[..size].to_vec();
    neurons.sort_unstable();
    AnalysisGroup {
        analysis: analysis.to_string(),
        neurons,
        plateau_members: plateau.min(size),
        extended: size > plateau,
    }
}

/// Frequency split, ablation sweep, regime segmentation and the enabled
/// group analyses, in that order.
///
/// With `group` given the sweep and segmentation are skipped and every
/// analysis runs on that group as is. All randomness derives from `seed`.
pub fn run_pipeline(model: &Model, stream: &TokenStream, cfg: &PipelineConfig, seed: u64, group: Option<&[usize]>) -> Result<PipelineResults, Error> {
    cfg.validate().map_err(|m| Error::new(Stage::Load, crate::ErrorKind::Config(m)))?;
    let arch = model.arch();
    if stream.vocab_size != arch.vocab_size {
        return Err(Error::new(
            Stage::Load,
            PipelineError::VocabMismatch {
                stream: stream.vocab_size,
                model: arch.vocab_size,
            },
        ));
    }

    let freq = count_frequencies(stream, arch.vocab_size);
    let elbow = detect_elbow(&sorted_log_frequency(&freq), cfg.elbow_window).stage(Stage::Freq)?;
    let split = split_classes(&freq, elbow.rank, cfg.percentile).stage(Stage::Freq)?;

    let mut sweep = None;
    let mut regimes = None;
    let mut robustness = Vec::new();
    let groups: Vec<AnalysisGroup> = match group {
        Some(g) => cfg
            .analyses
            .enabled()
            .into_iter()
            .map(|a| AnalysisGroup {
                analysis: a.to_string(),
                neurons: g.to_vec(),
                plateau_members: 0,
                extended: false,
            })
            .collect(),
        None => {
            let diffs = ablation_diffs(model, stream).stage(Stage::Sweep)?;
            let s = diffs.summarize(&split).stage(Stage::Sweep)?;
            let rare = segment_regimes(&s, SweepClass::Rare, &cfg.regimes).stage(Stage::Regimes)?;
            let common = segment_regimes(&s, SweepClass::Common, &cfg.regimes).stage(Stage::Regimes)?;
            for &p in &cfg.robustness_percentiles {
                let alt_split = split_classes(&freq, elbow.rank, p).stage(Stage::Freq)?;
                let alt = diffs.summarize(&alt_split).stage(Stage::Sweep)?;
                let seg = segment_regimes(&alt, SweepClass::Rare, &cfg.regimes).stage(Stage::Regimes)?;
                robustness.push(PlateauOverlap {
                    percentile: p,
                    overlap: plateau_overlap(&rare.plateau_set, &seg.plateau_set),
                    plateau_set: seg.plateau_set,
                });
            }
            let k = rare.plateau_end_rank;
            let ranking = &s.ranking_rare;
            let mins = [
                ("geometry", MIN_GEOMETRY_GROUP),
                ("graph", MIN_GRAPH_GROUP),
                ("attention", 1),
                ("spectral", MIN_SPECTRAL_GROUP),
            ];
            let enabled = cfg.analyses.enabled();
            let chosen = mins
                .iter()
                .filter(|(a, _)| enabled.contains(a))
                .map(|&(a, m)| choose_group(a, ranking, k, m))
                .collect();
            sweep = Some(s);
            regimes = Some(ClassRegimes { rare, common });
            chosen
        }
    };
    let group_for = |a: &str| groups.iter().find(|g| g.analysis == a).map(|g| g.neurons.as_slice());

    let mut geometry = None;
    let mut graph = None;
    if cfg.analyses.geometry || cfg.analyses.graph {
        let acts = final_activations(model, stream, &[]).stage(Stage::Geometry)?;
        let rare_acts = acts.rows(&acts.class_positions(&split, TokenClass::Rare));
        if let Some(g) = group_for("geometry") {
            let gc = GeometryConfig {
                tau: cfg.tau,
                baselines: cfg.baselines,
                seed,
            };
            geometry = Some(geometry_analysis(rare_acts.view(), g, g, &gc).stage(Stage::Geometry)?);
        }
        if let Some(g) = group_for("graph") {
            let gc = GraphConfig {
                bins: cfg.bins,
                baselines: cfg.baselines,
                seed,
                louvain: LouvainConfig {
                    restarts: cfg.louvain_restarts,
                    seed,
                    ..LouvainConfig::default()
                },
            };
            graph = Some(graph_analysis(rare_acts.view(), g, g, &gc).stage(Stage::Graph)?);
        }
    }
    let attention = match group_for("attention") {
        Some(g) => {
            let ac = AttentionConfig {
                baselines: cfg.baselines,
                seed,
                max_offset: cfg.max_offset,
            };
            Some(attention_analysis(model, stream, &split, g, g, &ac).stage(Stage::Attention)?)
        }
        None => None,
    };
    let spectral = match group_for("spectral") {
        Some(g) => {
            let sc = SpectralConfig {
                weights: cfg.spectral_weights,
                baselines: cfg.baselines,
                seed,
            };
            Some(spectral_analysis(model, g, g, &sc).stage(Stage::Spectrum)?)
        }
        None => None,
    };

    Ok(PipelineResults {
        token_classes: TokenClassSummary::new(&split, elbow.found),
        rare_only_plateau: regimes.as_ref().map(|r| r.rare.has_plateau() && !r.common.has_plateau()),
        sweep,
        regimes,
        robustness,
        groups,
        geometry,
        graph,
        attention,
        spectral,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_bundle, small_arch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn overlap_is_symmetric_and_bounded() {
        assert_eq!(plateau_overlap(&[], &[]), 1.0);
        assert_eq!(plateau_overlap(&[1, 2], &[]), 0.0);
        assert_eq!(plateau_overlap(&[1, 2, 3, 4], &[2, 3, 9]), 0.5);
        assert_eq!(plateau_overlap(&[2, 3, 9], &[1, 2, 3, 4]), 0.5);
    }

    #[test]
    fn groups_extend_the_plateau_by_rank() {
        let ranking = [7, 3, 9, 1, 0, 2];
        let g = choose_group("graph", &ranking, 2, 4);
        assert_eq!(g.neurons, vec![1, 3, 7, 9]);
        assert_eq!(g.plateau_members, 2);
        assert!(g.extended);
        let g = choose_group("attention", &ranking, 3, 1);
        assert_eq!(g.neurons, vec![3, 7, 9]);
        assert!(!g.extended);
    }

    #[test]
    fn config_ranges_are_enforced() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = [
            PipelineConfig {
                percentile: 1.0,
                ..Default::default()
            },
            PipelineConfig {
                baselines: 9,
                ..Default::default()
            },
            PipelineConfig {
                elbow_window: 50,
                ..Default::default()
            },
            PipelineConfig {
                analyses: AnalysisSet::none(),
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn explicit_group_skips_the_sweep() {
        let arch = small_arch(2, 16, 48, 4, 64, 32);
        let model = Model::new(&random_bundle(&arch, 0.3, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<u32> = (0..32 * 100).map(|_| (rng.random::<f64>().powi(2) * 64.0) as u32).collect();
        let stream = TokenStream::new(ids, vec![0], 64).unwrap();
        let cfg = PipelineConfig {
            elbow_window: 5,
            percentile: 0.4,
            analyses: AnalysisSet {
                spectral: false,
                attention: false,
                ..AnalysisSet::all()
            },
            ..Default::default()
        };
        let group: Vec<usize> = (0..10).collect();
        let r = run_pipeline(&model, &stream, &cfg, 3, Some(&group)).unwrap();
        assert!(r.sweep.is_none() && r.regimes.is_none() && r.rare_only_plateau.is_none());
        assert_eq!(r.groups.len(), 2);
        assert_eq!(r.geometry.as_ref().unwrap().group, group);
        assert_eq!(r.graph.as_ref().unwrap().group, group);
        assert!(r.attention.is_none() && r.spectral.is_none());
        let again = run_pipeline(&model, &stream, &cfg, 3, Some(&group)).unwrap();
        assert_eq!(serde_json::to_string(&r).unwrap(), serde_json::to_string(&again).unwrap());
    }
}
