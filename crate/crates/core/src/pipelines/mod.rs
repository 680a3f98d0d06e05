//! End-to-end analyses: ablation sweep, regime segmentation and the four
//! group analyses with size-matched random baselines.

mod attention;
mod geometry;
mod graph;
mod groups;
mod regimes;
mod run;
mod spectral;
mod sweep;

use thiserror::Error;

use crate::estimators::EstimatorError;
use crate::model::ModelError;

pub use attention::{attention_analysis, group_impact, AttentionConfig, AttentionReport, HeadConcentration, HeadImpact};
pub use geometry::{geometry_analysis, GeometryConfig, GeometryReport, MIN_GEOMETRY_GROUP, POSITIONS_PER_NEURON};
pub use graph::{graph_analysis, mi_graph, CommunitySummary, GraphConfig, GraphReport, MIN_GRAPH_GROUP};
pub use groups::{final_activations, sample_baseline_groups, BaselineComparison, PositionActivations, SIGNIFICANCE_LEVEL};
pub use regimes::{segment_curve, segment_regimes, RegimeSegmentation, RegimeThresholds, SegmentFit};
pub use run::{plateau_overlap, run_pipeline, AnalysisGroup, AnalysisSet, ClassRegimes, PipelineConfig, PipelineResults, PlateauOverlap, TokenClassSummary};
pub use spectral::{group_spectrum, spectral_analysis, spectral_analysis_rows, SpectralConfig, SpectralReport, TailEstimate, WeightChoice, MIN_SPECTRAL_GROUP};
pub use sweep::{ablation_diffs, ablation_sweep, AblationDiffs, AblationSweepResult, ClassSizes, NeuronRecord, SweepClass};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("no evaluated position has a {0}-class target")]
    EmptyTokenClass(&'static str),
    #[error("{positive} positive influence values, need at least {needed}")]
    InsufficientPositiveMass { positive: usize, needed: usize },
    #[error("group of {size} neurons is below the minimum of {min}")]
    GroupTooSmall { size: usize, min: usize },
    #[error("{got} positions available, at least {need} required")]
    TooFewPositions { need: usize, got: usize },
    #[error("model has {0} layers, attention analysis needs at least 2")]
    TooFewLayers(usize),
    #[error("vocabulary sizes differ: {stream} in data, {model} in model")]
    VocabMismatch { stream: usize, model: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}
