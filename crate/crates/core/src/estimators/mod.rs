//! Statistical and spectral primitives shared by the analysis pipelines.

mod correlation;
mod gini;
mod hill;
mod loglog;
mod louvain;
mod mi;
mod pca;
mod ttest;

use thiserror::Error;

pub use correlation::{midranks, pearson, spearman};
pub use gini::{gini, gini_with, GiniVariant};
pub use hill::{fix_finger_k, hill_alpha, FixFinger, HillResult};
pub use loglog::{least_squares, loglog_fit, LogLogFit};
pub use louvain::{louvain, modularity, LouvainConfig, Partition, WeightedGraph};
pub use mi::{mutual_information, quantile_bins, DEFAULT_BINS};
pub use pca::{effective_dimension, effective_dimension_from_eigenvalues, spectrum_of_gram, symmetric_eigenvalues, Spectrum};
pub use ttest::{one_sample_t, single_vs_sample_t, student_t_two_sided_p, welch_t, TTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("empty input")]
    Empty,
    #[error("negative or non-finite weight at index {0}")]
    InvalidWeight(usize),
    #[error("all weights are zero")]
    AllZeroWeights,
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("constant input")]
    ConstantInput,
    #[error("degenerate sample: both variances are zero")]
    DegenerateSample,
    #[error("every row has zero variance")]
    ZeroVariance,
    #[error("non-positive value {value} at index {index}")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("non-finite value")]
    NonFinite,
    #[error("spectrum has {0} positive eigenvalues, need at least 20")]
    SpectrumTooSmall(usize),
    #[error("invalid tail count k = {k} for {n} eigenvalues")]
    InvalidTail { k: usize, n: usize },
    #[error("graph has no positive edge")]
    EmptyGraph,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("label {label} out of range for {n} nodes")]
    LabelOutOfRange { label: usize, n: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}
