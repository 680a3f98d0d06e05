use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::groups::{check_group, sample_baseline_groups, BaselineComparison};
use super::PipelineError;
use crate::estimators::{fix_finger_k, hill_alpha, spectrum_of_gram, Spectrum};
use crate::model::Model;

/// Fix-finger needs a tail to work with.
pub const MIN_SPECTRAL_GROUP: usize = 20;

/// Which final-layer weights represent a neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightChoice {
    /// The neuron's input row of `W_in`.
    #[default]
    WIn,
    /// The neuron's output column of `W_out`.
    WOut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub weights: WeightChoice,
    pub baselines: usize,
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            weights: WeightChoice::WIn,
            baselines: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    #[serde(with = "crate::float_serde")]
    pub alpha_hill: f64,
    pub k: usize,
    pub lambda_k: f64,
    pub lambda_peak: f64,
    /// Fix-finger or Hill hit a degenerate case.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub group: Vec<usize>,
    pub weights: WeightChoice,
    pub eigenvalues: Vec<f64>,
    pub tail: TailEstimate,
    pub baseline_groups: Vec<Vec<usize>>,
    pub baseline_tails: Vec<TailEstimate>,
    pub alpha: BaselineComparison,
}

/// Spectrum of `(1/d)·W_G·W_Gᵀ` for the group's rows of `rows`
/// (`[neurons × d]`).
pub fn group_spectrum(rows: ArrayView2<f64>, group: &[usize]) -> Result<Spectrum, PipelineError> {
    let w = rows.select(Axis(0), group);
    Ok(spectrum_of_gram(w.view(), 1.0 / rows.ncols() as f64)?)
}

fn tail(spec: &Spectrum) -> Result<TailEstimate, PipelineError> {
    let ff = fix_finger_k(spec)?;
    let h = hill_alpha(spec, ff.k)?;
    Ok(TailEstimate {
        alpha_hill: h.alpha_hill,
        k: h.k,
        lambda_k: h.lambda_k,
        lambda_peak: ff.lambda_peak,
        degenerate: ff.degenerate || h.degenerate,
    })
}

/// Hill tail index of a group's weight correlation spectrum against
/// size-matched random groups drawn from outside `exclude`. Lower values
/// mean heavier tails.
pub fn spectral_analysis_rows(rows: ArrayView2<f64>, group: &[usize], exclude: &[usize], cfg: &SpectralConfig) -> Result<SpectralReport, PipelineError> {
    let n = rows.nrows();
    check_group(group, n, MIN_SPECTRAL_GROUP)?;
    let spec = group_spectrum(rows, group)?;
    let own = tail(&spec)?;
    let baseline_groups = sample_baseline_groups(n, exclude, group.len(), cfg.baselines, cfg.seed)?;
    let baseline_tails = baseline_groups.iter().map(|g| tail(&group_spectrum(rows, g)?)).collect::<Result<Vec<_>, _>>()?;
    Ok(SpectralReport {
        group: group.to_vec(),
        weights: cfg.weights,
        eigenvalues: spec.eigenvalues,
        alpha: BaselineComparison::new(own.alpha_hill, baseline_tails.iter().map(|t| t.alpha_hill).collect()),
        tail: own,
        baseline_groups,
        baseline_tails,
    })
}

/// [`spectral_analysis_rows`] on the model's final-layer weights.
pub fn spectral_analysis(model: &Model, group: &[usize], exclude: &[usize], cfg: &SpectralConfig) -> Result<SpectralReport, PipelineError> {
    match cfg.weights {
        WeightChoice::WIn => spectral_analysis_rows(model.final_w_in(), group, exclude, cfg),
        WeightChoice::WOut => spectral_analysis_rows(model.final_w_out().t(), group, exclude, cfg),
    }
}
