use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::container::{Container, Dtype, TensorRecord};
use super::TensorIoError;

/// Metadata key under which the architecture descriptor is stored (as JSON).
pub const ARCH_METADATA_KEY: &str = "raretok.arch";
/// File name looked up when `load_model` is handed a directory.
pub const MODEL_FILE: &str = "model.safetensors";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation, as used by GPT-2
    #[default]
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    #[default]
    PreLayernorm,
}

fn default_ln_eps() -> f64 {
    1e-5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchDescriptor {
    pub n_layers: usize,
    pub d_model: usize,
    pub d_mlp: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub norm: Norm,
    #[serde(default = "default_ln_eps")]
    pub ln_eps: f64,
}

impl ArchDescriptor {
    pub fn validate(&self) -> Result<(), TensorIoError> {
        let bad = |msg: String| Err(TensorIoError::InvalidArch(msg));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} not divisible into {} heads", self.d_model, self.n_heads));
        }
        if self.d_mlp < self.d_model {
            return bad(format!("d_mlp {} < d_model {}", self.d_mlp, self.d_model));
        }
        if self.vocab_size < 2 {
            return bad(format!("vocab_size {} < 2", self.vocab_size));
        }
        if self.max_context == 0 {
            return bad("max_context must be positive".into());
        }
        if !(self.ln_eps > 0.0) {
            return bad("ln_eps must be positive".into());
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Tensors that must be present, with their shapes.
    pub fn required_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let (d, m, v) = (self.d_model, self.d_mlp, self.vocab_size);
        let mut out = vec![(names::TOK_EMBED.to_string(), vec![v, d]), (names::UNEMBED.to_string(), vec![v, d])];
        for l in 0..self.n_layers {
            for w in ["w_q", "w_k", "w_v", "w_o"] {
                out.push((names::attn(l, w), vec![d, d]));
            }
            out.push((names::mlp(l, "w_in"), vec![m, d]));
            out.push((names::mlp(l, "b_in"), vec![m]));
            out.push((names::mlp(l, "w_out"), vec![d, m]));
            out.push((names::mlp(l, "b_out"), vec![d]));
        }
        out
    }

    /// Tensors that default to identity/zero when absent.
    pub fn optional_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out = vec![
            (names::POS_EMBED.to_string(), vec![self.max_context, d]),
            (names::LN_F_G.to_string(), vec![d]),
            (names::LN_F_B.to_string(), vec![d]),
        ];
        for l in 0..self.n_layers {
            for p in ["ln1.g", "ln1.b", "ln2.g", "ln2.b"] {
                out.push((format!("layer{l}.{p}"), vec![d]));
            }
            for b in ["b_q", "b_k", "b_v", "b_o"] {
                out.push((names::attn(l, b), vec![d]));
            }
        }
        out
    }
}

/// Canonical tensor names.
pub mod names {
    pub const TOK_EMBED: &str = "embed.tok";
    pub const POS_EMBED: &str = "embed.pos";
    pub const UNEMBED: &str = "unembed.w";
    pub const LN_F_G: &str = "ln_f.g";
    pub const LN_F_B: &str = "ln_f.b";

    pub fn attn(layer: usize, part: &str) -> String {
        format!("layer{layer}.attn.{part}")
    }

    pub fn mlp(layer: usize, part: &str) -> String {
        format!("layer{layer}.mlp.{part}")
    }

    pub fn ln(layer: usize, which: &str) -> String {
        format!("layer{layer}.{which}")
    }
}

/// Architecture plus named weights for a decoder-only transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchDescriptor,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl ModelBundle {
    /// Validates the architecture and every tensor it names.
    pub fn new(arch: ArchDescriptor, tensors: BTreeMap<String, TensorRecord>) -> Result<Self, TensorIoError> {
        arch.validate()?;
        for (name, shape) in arch.required_tensors() {
            let rec = tensors.get(&name).ok_or_else(|| TensorIoError::MissingTensor(name.clone()))?;
            check_shape(rec, &shape)?;
        }
        for (name, shape) in arch.optional_tensors() {
            if let Some(rec) = tensors.get(&name) {
                check_shape(rec, &shape)?;
            }
        }
        for rec in tensors.values() {
            if let Some(bad) = rec.data.iter().position(|v| !v.is_finite()) {
                return Err(TensorIoError::NonFiniteValue {
                    name: rec.name.clone(),
                    index: bad,
                });
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn get(&self, name: &str) -> Option<&TensorRecord> {
        self.tensors.get(name)
    }

    /// Row-major 2-D view of a tensor the constructor has already validated.
    pub fn matrix(&self, name: &str) -> Option<ArrayView2<'_, f64>> {
        let rec = self.tensors.get(name)?;
        if rec.shape.len() != 2 {
            return None;
        }
        ArrayView2::from_shape((rec.shape[0], rec.shape[1]), &rec.data).ok()
    }

    pub fn vector(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        let rec = self.tensors.get(name)?;
        if rec.shape.len() != 1 {
            return None;
        }
        Some(ArrayView1::from(&rec.data[..]))
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.metadata
            .insert(ARCH_METADATA_KEY.to_string(), serde_json::to_string(&self.arch).expect("arch json"));
        for rec in self.tensors.values() {
            c.insert(rec.clone());
        }
        c
    }

    /// Writes the bundle; a directory path receives `model.safetensors`.
    pub fn save(&self, path: &Path) -> Result<(), TensorIoError> {
        self.to_container().write(&resolve_model_path(path))
    }
}

fn check_shape(rec: &TensorRecord, shape: &[usize]) -> Result<(), TensorIoError> {
    if rec.shape != shape {
        return Err(TensorIoError::ShapeMismatch {
            name: rec.name.clone(),
            expected: shape.to_vec(),
            found: rec.shape.clone(),
        });
    }
    Ok(())
}

fn resolve_model_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MODEL_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a bundle from a container file (or a directory holding
/// `model.safetensors`). Containers without an embedded architecture are
/// read as Hugging Face GPT-2 exports, with `config.json` alongside.
pub fn load_model(path: &Path) -> Result<ModelBundle, TensorIoError> {
    let file = resolve_model_path(path);
    let container = Container::read(&file)?;
    if let Some(arch_json) = container.metadata.get(ARCH_METADATA_KEY) {
        let arch: ArchDescriptor = serde_json::from_str(arch_json).map_err(|e| TensorIoError::MalformedHeader(format!("{ARCH_METADATA_KEY}: {e}")))?;
        return ModelBundle::new(arch, container.tensors);
    }
    let config_path = file.with_file_name("config.json");
    let config = fs::read(&config_path).map_err(|e| TensorIoError::io(&config_path, e))?;
    let config: Gpt2Config = serde_json::from_slice(&config).map_err(|e| TensorIoError::MalformedHeader(format!("config.json: {e}")))?;
    import_gpt2(&config, container)
}

/// Subset of the Hugging Face GPT-2 `config.json`.
#[derive(Debug, Clone, Deserialize)]
pub struct Gpt2Config {
    pub n_layer: usize,
    pub n_embd: usize,
    pub n_head: usize,
    pub vocab_size: usize,
    #[serde(alias = "n_ctx")]
    pub n_positions: usize,
    #[serde(default)]
    pub n_inner: Option<usize>,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_epsilon: f64,
    #[serde(default)]
    pub activation_function: Option<String>,
}

/// Maps GPT-2 checkpoint names (`h.{l}.attn.c_attn.weight`, ...) onto the
/// canonical layout. Conv1D weights are stored `[in, out]` and get
/// transposed; the fused QKV projection is split; the unembedding is tied
/// to `wte`.
pub fn import_gpt2(config: &Gpt2Config, container: Container) -> Result<ModelBundle, TensorIoError> {
    match config.activation_function.as_deref() {
        None | Some("gelu_new") | Some("gelu_pytorch_tanh") => {}
        Some(other) => return Err(TensorIoError::InvalidArch(format!("activation {other} is not the tanh GeLU"))),
    }
    let d = config.n_embd;
    let arch = ArchDescriptor {
        n_layers: config.n_layer,
        d_model: d,
        d_mlp: config.n_inner.unwrap_or(4 * d),
        n_heads: config.n_head,
        vocab_size: config.vocab_size,
        max_context: config.n_positions,
        activation: Activation::Gelu,
        norm: Norm::PreLayernorm,
        ln_eps: config.layer_norm_epsilon,
    };
    arch.validate()?;

    let src = container.tensors;
    let prefix = if src.contains_key("transformer.wte.weight") { "transformer." } else { "" };
    let fetch = |name: &str| -> Result<&TensorRecord, TensorIoError> {
        let full = format!("{prefix}{name}");
        src.get(&full).ok_or(TensorIoError::MissingTensor(full))
    };

    let mut out = BTreeMap::new();
    let mut put = |name: String, shape: Vec<usize>, data: Vec<f64>, dtype: Dtype| -> Result<(), TensorIoError> {
        let rec = TensorRecord::new(name.clone(), dtype, shape, data)?;
        out.insert(name, rec);
        Ok(())
    };

    let wte = fetch("wte.weight")?;
    put(names::TOK_EMBED.into(), wte.shape.clone(), wte.data.clone(), wte.dtype)?;
    put(names::UNEMBED.into(), wte.shape.clone(), wte.data.clone(), wte.dtype)?;
    let wpe = fetch("wpe.weight")?;
    put(names::POS_EMBED.into(), wpe.shape.clone(), wpe.data.clone(), wpe.dtype)?;
    let lnf_g = fetch("ln_f.weight")?;
    put(names::LN_F_G.into(), lnf_g.shape.clone(), lnf_g.data.clone(), lnf_g.dtype)?;
    let lnf_b = fetch("ln_f.bias")?;
    put(names::LN_F_B.into(), lnf_b.shape.clone(), lnf_b.data.clone(), lnf_b.dtype)?;

    for l in 0..arch.n_layers {
        let h = |s: &str| format!("h.{l}.{s}");
        for (ours, theirs) in [
            ("ln1.g", "ln_1.weight"),
            ("ln1.b", "ln_1.bias"),
            ("ln2.g", "ln_2.weight"),
            ("ln2.b", "ln_2.bias"),
        ] {
            let rec = fetch(&h(theirs))?;
            put(names::ln(l, ours), rec.shape.clone(), rec.data.clone(), rec.dtype)?;
        }
        let qkv = fetch(&h("attn.c_attn.weight"))?;
        expect_shape(qkv, &[d, 3 * d])?;
        let qkv_b = fetch(&h("attn.c_attn.bias"))?;
        expect_shape(qkv_b, &[3 * d])?;
        for (i, (w, b)) in [("w_q", "b_q"), ("w_k", "b_k"), ("w_v", "b_v")].into_iter().enumerate() {
            // column block i of the [d, 3d] matrix, transposed to [d_out, d_in]
            let mut block = vec![0.0; d * d];
            for row in 0..d {
                for col in 0..d {
                    block[col * d + row] = qkv.data[row * 3 * d + i * d + col];
                }
            }
            put(names::attn(l, w), vec![d, d], block, qkv.dtype)?;
            put(names::attn(l, b), vec![d], qkv_b.data[i * d..(i + 1) * d].to_vec(), qkv_b.dtype)?;
        }
        let proj = fetch(&h("attn.c_proj.weight"))?;
        put(names::attn(l, "w_o"), vec![d, d], transpose(proj, d, d)?, proj.dtype)?;
        let proj_b = fetch(&h("attn.c_proj.bias"))?;
        put(names::attn(l, "b_o"), proj_b.shape.clone(), proj_b.data.clone(), proj_b.dtype)?;

        let m = arch.d_mlp;
        let fc = fetch(&h("mlp.c_fc.weight"))?;
        put(names::mlp(l, "w_in"), vec![m, d], transpose(fc, d, m)?, fc.dtype)?;
        let fc_b = fetch(&h("mlp.c_fc.bias"))?;
        put(names::mlp(l, "b_in"), fc_b.shape.clone(), fc_b.data.clone(), fc_b.dtype)?;
        let cp = fetch(&h("mlp.c_proj.weight"))?;
        put(names::mlp(l, "w_out"), vec![d, m], transpose(cp, m, d)?, cp.dtype)?;
        let cp_b = fetch(&h("mlp.c_proj.bias"))?;
        put(names::mlp(l, "b_out"), cp_b.shape.clone(), cp_b.data.clone(), cp_b.dtype)?;
    }
    ModelBundle::new(arch, out)
}

fn expect_shape(rec: &TensorRecord, shape: &[usize]) -> Result<(), TensorIoError> {
    check_shape(rec, shape)
}

/// Transposes a `[rows, cols]` record into row-major `[cols, rows]` data.
fn transpose(rec: &TensorRecord, rows: usize, cols: usize) -> Result<Vec<f64>, TensorIoError> {
    expect_shape(rec, &[rows, cols])?;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = rec.data[r * cols + c];
        }
    }
    Ok(out)
}
