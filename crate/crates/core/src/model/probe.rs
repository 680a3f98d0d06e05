//! Exact per-neuron ablation losses without re-running the network.
//!
//! Mean-ablating final-layer neuron `i` moves the residual entering the
//! final layernorm by `δ·w_i` (with `δ = n̄_i − n_i` and `w_i` the neuron's
//! `W_out` column). Writing `u = x − mean(x)` and `v = w_i − mean(w_i)`, the
//! ablated logits are
//!
//! ```text
//! z_j = (P_j + δ·Q_ij) / sqrt((u·u + 2δ·u·v + δ²·v·v)/d + eps) + c_j
//! P_j = Σ_k U_jk g_k u_k,  Q_ij = Σ_k U_jk g_k v_k,  c_j = Σ_k U_jk b_k
//! ```
//!
//! so once `P` (per position) and `Q` (per neuron) are known each ablated
//! loss costs one pass over the vocabulary.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::Model;

/// Neuron `Q` rows are cached when `d_mlp × vocab` stays under this many
/// elements; otherwise they are rebuilt per call.
const Q_CACHE_LIMIT: usize = 1 << 25;

pub struct FinalLayerProbe<'m> {
    model: &'m Model,
    /// `U ⊙ g`, `[vocab × d_model]`
    unembed_g: Array2<f64>,
    /// `U · b`, `[vocab]`
    bias_logits: Array1<f64>,
    /// centred `W_out` columns, `[d_mlp × d_model]`
    v: Array2<f64>,
    vv: Array1<f64>,
    q: Option<Array2<f64>>,
    eps: f64,
}

/// Baseline quantities for one window of positions.
pub struct WindowState {
    p: Array2<f64>,
    uu: Array1<f64>,
    /// Largest baseline logit per position; the log-sum-exp shift.
    zmax: Array1<f64>,
    /// `u_t · v_i`, `[positions × d_mlp]`
    uv: Array2<f64>,
}

impl WindowState {
    pub fn len(&self) -> usize {
        self.p.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.p.nrows() == 0
    }
}

impl<'m> FinalLayerProbe<'m> {
    pub fn new(model: &'m Model) -> Self {
        let (g, b) = model.final_norm();
        let unembed = model.unembed();
        let unembed_g = &unembed * &g.insert_axis(Axis(0));
        let bias_logits = unembed.dot(&b);
        let w_out = model.final_w_out();
        let mut v = w_out.t().to_owned();
        for mut row in v.rows_mut() {
            let m = row.sum() / row.len() as f64;
            row.mapv_inplace(|x| x - m);
        }
        let vv = v.rows().into_iter().map(|r| r.dot(&r)).collect();
        let q = (v.nrows() * unembed.nrows() <= Q_CACHE_LIMIT).then(|| v.dot(&unembed_g.t()));
        Self {
            model,
            unembed_g,
            bias_logits,
            v,
            vv,
            q,
            eps: model.arch().ln_eps,
        }
    }

    pub fn n_neurons(&self) -> usize {
        self.v.nrows()
    }

    /// `resid_final` is the `[positions × d_model]` residual entering the
    /// final layernorm, as recorded in a forward trace.
    pub fn window(&self, resid_final: ArrayView2<f64>) -> WindowState {
        let mut u = resid_final.to_owned();
        for mut row in u.rows_mut() {
            let m = row.sum() / row.len() as f64;
            row.mapv_inplace(|x| x - m);
        }
        let uu: Array1<f64> = u.rows().into_iter().map(|r| r.dot(&r)).collect();
        let p = u.dot(&self.unembed_g.t());
        let d = self.v.ncols() as f64;
        let zmax = p
            .rows()
            .into_iter()
            .zip(&uu)
            .map(|(row, &uu)| {
                let inv = 1.0 / (uu / d + self.eps).sqrt();
                row.iter()
                    .zip(&self.bias_logits)
                    .map(|(pj, cj)| pj * inv + cj)
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        WindowState {
            p,
            uu,
            zmax,
            uv: u.dot(&self.v.t()),
        }
    }

    /// Neuron `i`'s logit-direction row `Q_i`.
    pub fn neuron_row(&self, neuron: usize) -> Array1<f64> {
        match &self.q {
            Some(q) => q.row(neuron).to_owned(),
            None => self.unembed_g.dot(&self.v.row(neuron)),
        }
    }

    /// Cross-entropy of `target` at `pos` after shifting the residual by
    /// `delta` along neuron `neuron`'s output direction. `delta = 0` gives
    /// the baseline loss through the same arithmetic.
    pub fn loss(&self, state: &WindowState, pos: usize, neuron: usize, q_row: ArrayView1<f64>, delta: f64, target: usize) -> f64 {
        let d = self.v.ncols() as f64;
        let var = (state.uu[pos] + 2.0 * delta * state.uv[[pos, neuron]] + delta * delta * self.vv[neuron]) / d;
        let inv = 1.0 / (var + self.eps).sqrt();
        let p = state.p.row(pos);
        let p = p.as_slice().expect("row-major");
        let q = q_row.as_slice().expect("contiguous");
        let c = self.bias_logits.as_slice().expect("contiguous");
        let zt = (p[target] + delta * q[target]) * inv + c[target];
        // single pass shifted by the baseline maximum; an ablation large
        // enough to overflow falls back to the exact maximum
        let shifted_sum = |shift: f64| -> f64 {
            let mut sum = 0.0;
            for j in 0..p.len() {
                sum += ((p[j] + delta * q[j]) * inv + c[j] - shift).exp();
            }
            sum
        };
        let shift = state.zmax[pos];
        let sum = shifted_sum(shift);
        if sum.is_finite() && sum >= 1.0e-300 {
            return shift + sum.ln() - zt;
        }
        let max = (0..p.len()).map(|j| (p[j] + delta * q[j]) * inv + c[j]).fold(f64::NEG_INFINITY, f64::max);
        max + shifted_sum(max).ln() - zt
    }

    pub fn model(&self) -> &Model {
        self.model
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{token_loss, Intervention};
    use crate::synth::{random_bundle, small_arch};

    #[test]
    fn matches_full_forward_ablation() {
        let arch = small_arch(2, 16, 64, 4, 80, 20);
        let mut bundle = random_bundle(&arch, 0.4, 21);
        // non-trivial final layernorm parameters
        let g: Vec<f64> = (0..16).map(|i| 0.5 + 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..16).map(|i| 0.05 * i as f64 - 0.3).collect();
        bundle
            .tensors
            .insert("ln_f.g".into(), crate::tensor_io::TensorRecord::f64("ln_f.g", vec![16], g).unwrap());
        bundle
            .tensors
            .insert("ln_f.b".into(), crate::tensor_io::TensorRecord::f64("ln_f.b", vec![16], b).unwrap());
        let model = Model::new(&bundle);
        let probe = FinalLayerProbe::new(&model);
        let tokens: Vec<u32> = (0..20).map(|i| ((i * 29 + 3) % 80) as u32).collect();
        let base = model.forward(&tokens, &[]).unwrap();
        let state = probe.window(base.resid_final.view());
        let base_losses = token_loss(&base, &tokens).unwrap();
        for neuron in [0usize, 13, 63] {
            let mean = 0.17;
            let ablated = model.forward(&tokens, &[Intervention::MeanAblateNeuron { index: neuron, mean }]).unwrap();
            let ablated_losses = token_loss(&ablated, &tokens).unwrap();
            let q = probe.neuron_row(neuron);
            for pos in 0..tokens.len() - 1 {
                let target = tokens[pos + 1] as usize;
                let delta = mean - base.mlp_acts[[pos, neuron]];
                let fast = probe.loss(&state, pos, neuron, q.view(), delta, target);
                assert!((fast - ablated_losses[pos]).abs() < 1e-9, "{fast} vs {}", ablated_losses[pos]);
                let fast_base = probe.loss(&state, pos, neuron, q.view(), 0.0, target);
                assert!((fast_base - base_losses[pos]).abs() < 1e-9);
            }
        }
    }
}
