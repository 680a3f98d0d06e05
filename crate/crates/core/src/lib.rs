//! Rare-token neuron analysis for small decoder-only transformers.
//!
//! The crate covers tensor containers and model loading, a deterministic
//! forward pass with ablation hooks, token frequency statistics, the
//! statistical estimators, synthetic fixtures with planted ground truth, and
//! the end-to-end analysis pipelines with report emission.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod estimators;
mod float_serde;
pub mod model;
pub mod pipelines;
pub mod report;
pub mod synth;
pub mod tensor_io;
pub mod token_stats;

use thiserror::Error;

/// Stage tag attached to pipeline errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Freq,
    Synth,
    Sweep,
    Regimes,
    Geometry,
    Graph,
    Attention,
    Spectrum,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = serde_json::to_value(self).expect("unit enum");
        f.write_str(s.as_str().expect("string tag"))
    }
}

#[derive(Debug, Error)]
pub enum ErrorKind {
    #[error(transparent)]
    TensorIo(#[from] tensor_io::TensorIoError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    TokenStats(#[from] token_stats::TokenStatsError),
    #[error(transparent)]
    Estimator(#[from] estimators::EstimatorError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
    #[error(transparent)]
    Pipeline(#[from] pipelines::PipelineError),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Output { path: String, message: String },
}

/// An error tagged with the stage that raised it.
#[derive(Debug, Error)]
#[error("[{stage}] {kind}")]
pub struct Error {
    pub stage: Stage,
    #[source]
    pub kind: ErrorKind,
}

impl Error {
    pub fn new(stage: Stage, kind: impl Into<ErrorKind>) -> Self {
        Self { stage, kind: kind.into() }
    }
}

/// Coarse failure class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Bad or missing configuration.
    Config,
    /// Unreadable, malformed or unsuitable input data.
    Data,
    /// An estimator could not produce a value.
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match &self.kind {
            ErrorKind::Config(_) => ErrorCategory::Config,
            ErrorKind::Estimator(_) | ErrorKind::Pipeline(pipelines::PipelineError::Estimator(_)) => ErrorCategory::Numerical,
            _ => ErrorCategory::Data,
        }
    }
}

/// Attaches a stage tag to any convertible error.
pub trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T, Error>;
}

impl<T, E: Into<ErrorKind>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: Stage) -> Result<T, Error> {
        self.map_err(|e| Error::new(stage, e))
    }
}
