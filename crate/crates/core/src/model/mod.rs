//! Deterministic forward pass for pre-layernorm, GPT-2 style decoder-only
//! transformers, with hooks for final-layer MLP activations and attention
//! weights and intervention points for neuron mean-ablation and head zeroing.

mod probe;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use rayon::prelude::*;
use thiserror::Error;

use crate::tensor_io::{names, ArchDescriptor, ModelBundle, TokenStream};

pub use probe::FinalLayerProbe;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds context window {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("invalid intervention: {0}")]
    InvalidIntervention(String),
    #[error("token id {0} outside vocabulary")]
    TokenOutOfRange(u32),
    #[error("trace has {trace} positions but {tokens} tokens were given")]
    LengthMismatch { trace: usize, tokens: usize },
    #[error("reference set is empty")]
    EmptyReferenceSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intervention {
    /// Replace final-layer neuron `index` by `mean` at every position.
    MeanAblateNeuron {
        index: usize,
        mean: f64,
    },
    ZeroHead {
        layer: usize,
        head: usize,
    },
    ZeroAllHeads {
        layer: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub capture_attention: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { capture_attention: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `[positions × vocab]`
    pub logits: Array2<f64>,
    /// Post-GeLU activations of the final MLP layer, `[positions × d_mlp]`,
    /// after any mean-ablation was applied.
    pub mlp_acts: Array2<f64>,
    /// Residual stream entering the final layernorm, `[positions × d_model]`.
    pub resid_final: Array2<f64>,
    /// `attn[layer][head]` is a `[positions × positions]` lower-triangular
    /// row-stochastic matrix. Empty when capture was disabled.
    pub attn: Vec<Vec<Array2<f64>>>,
}

impl ForwardTrace {
    pub fn attention(&self, layer: usize, head: usize) -> Option<&Array2<f64>> {
        self.attn.get(layer)?.get(head)
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// GeLU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

/// Row-wise layernorm with biased variance.
pub fn layer_norm(x: ArrayView2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>, eps: f64) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        Zip::from(&mut row).and(&gain).and(&bias).for_each(|v, &g, &b| {
            *v = *v * inv * g + b;
        });
    }
    out
}

struct Layer {
    ln1_g: Array1<f64>,
    ln1_b: Array1<f64>,
    w_q: Array2<f64>,
    w_k: Array2<f64>,
    w_v: Array2<f64>,
    w_o: Array2<f64>,
    b_q: Array1<f64>,
    b_k: Array1<f64>,
    b_v: Array1<f64>,
    b_o: Array1<f64>,
    ln2_g: Array1<f64>,
    ln2_b: Array1<f64>,
    w_in: Array2<f64>,
    b_in: Array1<f64>,
    w_out: Array2<f64>,
    b_out: Array1<f64>,
}

/// Weights of a [`ModelBundle`] arranged for inference. Immutable and
/// shareable across threads.
pub struct Model {
    arch: ArchDescriptor,
    tok: Array2<f64>,
    pos: Array2<f64>,
    layers: Vec<Layer>,
    lnf_g: Array1<f64>,
    lnf_b: Array1<f64>,
    unembed: Array2<f64>,
}

impl Model {
    pub fn new(bundle: &ModelBundle) -> Self {
        let arch = bundle.arch.clone();
        let d = arch.d_model;
        let mat = |name: &str| bundle.matrix(name).expect("validated bundle").to_owned();
        let vec_or = |name: &str, fill: f64| bundle.vector(name).map(|v| v.to_owned()).unwrap_or_else(|| Array1::from_elem(d, fill));
        let layers = (0..arch.n_layers)
            .map(|l| Layer {
                ln1_g: vec_or(&names::ln(l, "ln1.g"), 1.0),
                ln1_b: vec_or(&names::ln(l, "ln1.b"), 0.0),
                w_q: mat(&names::attn(l, "w_q")),
                w_k: mat(&names::attn(l, "w_k")),
                w_v: mat(&names::attn(l, "w_v")),
                w_o: mat(&names::attn(l, "w_o")),
                b_q: vec_or(&names::attn(l, "b_q"), 0.0),
                b_k: vec_or(&names::attn(l, "b_k"), 0.0),
                b_v: vec_or(&names::attn(l, "b_v"), 0.0),
                b_o: vec_or(&names::attn(l, "b_o"), 0.0),
                ln2_g: vec_or(&names::ln(l, "ln2.g"), 1.0),
                ln2_b: vec_or(&names::ln(l, "ln2.b"), 0.0),
                w_in: mat(&names::mlp(l, "w_in")),
                b_in: bundle.vector(&names::mlp(l, "b_in")).expect("validated").to_owned(),
                w_out: mat(&names::mlp(l, "w_out")),
                b_out: bundle.vector(&names::mlp(l, "b_out")).expect("validated").to_owned(),
            })
            .collect();
        let pos = bundle
            .matrix(names::POS_EMBED)
            .map(|m| m.to_owned())
            .unwrap_or_else(|| Array2::zeros((arch.max_context, d)));
        Self {
            tok: mat(names::TOK_EMBED),
            pos,
            layers,
            lnf_g: vec_or(names::LN_F_G, 1.0),
            lnf_b: vec_or(names::LN_F_B, 0.0),
            unembed: mat(names::UNEMBED),
            arch,
        }
    }

    pub fn arch(&self) -> &ArchDescriptor {
        &self.arch
    }

    pub fn final_layer(&self) -> usize {
        self.arch.n_layers - 1
    }

    /// Final-layer `W_in`, `[d_mlp × d_model]`.
    pub fn final_w_in(&self) -> ArrayView2<'_, f64> {
        self.layers[self.final_layer()].w_in.view()
    }

    /// Final-layer `W_out`, `[d_model × d_mlp]`.
    pub fn final_w_out(&self) -> ArrayView2<'_, f64> {
        self.layers[self.final_layer()].w_out.view()
    }

    pub(crate) fn unembed(&self) -> ArrayView2<'_, f64> {
        self.unembed.view()
    }

    pub(crate) fn final_norm(&self) -> (ArrayView1<'_, f64>, ArrayView1<'_, f64>) {
        (self.lnf_g.view(), self.lnf_b.view())
    }

    pub fn validate(&self, interventions: &[Intervention]) -> Result<(), ModelError> {
        let a = &self.arch;
        for iv in interventions {
            let ok = match *iv {
                Intervention::MeanAblateNeuron { index, mean } => index < a.d_mlp && mean.is_finite(),
                Intervention::ZeroHead { layer, head } => layer < a.n_layers && head < a.n_heads,
                Intervention::ZeroAllHeads { layer } => layer < a.n_layers,
            };
            if !ok {
                return Err(ModelError::InvalidIntervention(format!("{iv:?}")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, tokens: &[u32], interventions: &[Intervention]) -> Result<ForwardTrace, ModelError> {
        self.forward_with(tokens, interventions, ForwardOptions::default())
    }

    pub fn forward_with(&self, tokens: &[u32], interventions: &[Intervention], opts: ForwardOptions) -> Result<ForwardTrace, ModelError> {
        let a = &self.arch;
        let t = tokens.len();
        if t > a.max_context {
            return Err(ModelError::ContextOverflow { len: t, max: a.max_context });
        }
        if let Some(&bad) = tokens.iter().find(|&&id| id as usize >= a.vocab_size) {
            return Err(ModelError::TokenOutOfRange(bad));
        }
        self.validate(interventions)?;

        let d = a.d_model;
        let n_heads = a.n_heads;
        let dh = a.d_head();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut x = Array2::<f64>::zeros((t, d));
        for (p, &id) in tokens.iter().enumerate() {
            let mut row = x.row_mut(p);
            row.assign(&self.tok.row(id as usize));
            row += &self.pos.row(p);
        }

        let mut attn_out = Vec::new();
        let mut final_acts = Array2::zeros((0, a.d_mlp));
        for (l, layer) in self.layers.iter().enumerate() {
            let zeroed: Vec<bool> = (0..n_heads)
                .map(|h| {
                    interventions.iter().any(|iv| match *iv {
                        Intervention::ZeroHead { layer, head } => layer == l && head == h,
                        Intervention::ZeroAllHeads { layer } => layer == l,
                        _ => false,
                    })
                })
                .collect();

            let normed = layer_norm(x.view(), layer.ln1_g.view(), layer.ln1_b.view(), a.ln_eps);
            let q = normed.dot(&layer.w_q.t()) + &layer.b_q;
            let k = normed.dot(&layer.w_k.t()) + &layer.b_k;
            let v = normed.dot(&layer.w_v.t()) + &layer.b_v;

            let mut z = Array2::<f64>::zeros((t, d));
            let mut layer_attn = Vec::new();
            for h in 0..n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
                let mut w = Array2::<f64>::zeros((t, t));
                for i in 0..t {
                    let qi = qh.row(i);
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..=i {
                        let s = qi.dot(&kh.row(j)) * scale;
                        w[[i, j]] = s;
                        max = max.max(s);
                    }
                    let mut sum = 0.0;
                    for j in 0..=i {
                        let e = (w[[i, j]] - max).exp();
                        w[[i, j]] = e;
                        sum += e;
                    }
                    for j in 0..=i {
                        w[[i, j]] /= sum;
                    }
                }
                if !zeroed[h] {
                    z.slice_mut(cols).assign(&w.dot(&vh));
                }
                if opts.capture_attention {
                    layer_attn.push(w);
                }
            }
            if opts.capture_attention {
                attn_out.push(layer_attn);
            }
            x += &(z.dot(&layer.w_o.t()) + &layer.b_o);

            let normed = layer_norm(x.view(), layer.ln2_g.view(), layer.ln2_b.view(), a.ln_eps);
            let mut acts = normed.dot(&layer.w_in.t()) + &layer.b_in;
            acts.mapv_inplace(gelu);
            if l + 1 == a.n_layers {
                for iv in interventions {
                    if let Intervention::MeanAblateNeuron { index, mean } = *iv {
                        acts.column_mut(index).fill(mean);
                    }
                }
            }
            x += &(acts.dot(&layer.w_out.t()) + &layer.b_out);
            if l + 1 == a.n_layers {
                final_acts = acts;
            }
        }

        let normed = layer_norm(x.view(), self.lnf_g.view(), self.lnf_b.view(), a.ln_eps);
        let logits = normed.dot(&self.unembed.t());
        Ok(ForwardTrace {
            logits,
            mlp_acts: final_acts,
            resid_final: x,
            attn: attn_out,
        })
    }
}

/// Numerically stable `log Σ exp`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.into_iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Next-token cross-entropy. Entry `t − 1` is the loss of predicting
/// `tokens[t]` from the logits at position `t − 1`, for `t` in `1..len`.
pub fn token_loss(trace: &ForwardTrace, tokens: &[u32]) -> Result<Vec<f64>, ModelError> {
    if trace.logits.nrows() != tokens.len() {
        return Err(ModelError::LengthMismatch {
            trace: trace.logits.nrows(),
            tokens: tokens.len(),
        });
    }
    Ok((1..tokens.len())
        .map(|t| {
            let row = trace.logits.row(t - 1);
            let target = row[tokens[t] as usize];
            if target == f64::INFINITY && row.iter().filter(|&&v| v == f64::INFINITY).count() == 1 {
                return 0.0;
            }
            log_sum_exp(row.iter().copied()) - target
        })
        .collect())
}

/// Per-neuron mean of final-layer activations over every position of the
/// stream. Accumulation is shifted by the first position's activations,
/// so a neuron that is constant gets that constant back exactly.
pub fn mean_activation(model: &Model, stream: &TokenStream) -> Result<Array1<f64>, ModelError> {
    let windows = stream.windows(model.arch.max_context);
    if windows.is_empty() {
        return Err(ModelError::EmptyReferenceSet);
    }
    let opts = ForwardOptions { capture_attention: false };
    let first = model.forward_with(windows[0], &[], opts)?.mlp_acts.row(0).to_owned();
    let partials: Vec<(Array1<f64>, usize)> = windows
        .par_iter()
        .map(|w| {
            let acts = model.forward_with(w, &[], opts)?.mlp_acts;
            let mut sum = Array1::<f64>::zeros(acts.ncols());
            for row in acts.rows() {
                Zip::from(&mut sum).and(&row).and(&first).for_each(|s, &v, &f| *s += v - f);
            }
            Ok((sum, acts.nrows()))
        })
        .collect::<Result<_, ModelError>>()?;
    let mut total = Array1::<f64>::zeros(first.len());
    let mut count = 0usize;
    for (sum, n) in &partials {
        total += sum;
        count += n;
    }
    Ok(&first + &(total / count as f64))
}

/// Mean-ablation applied to a single residual vector: `x + (target − current)·w`.
pub fn ablate_residual(x: ArrayView1<f64>, w_out: ArrayView1<f64>, current: f64, target: f64) -> Array1<f64> {
    let delta = target - current;
    Zip::from(&x).and(&w_out).map_collect(|&xi, &wi| xi + delta * wi)
}
