//! Binary tensor containers, model bundles, activation shards and token
//! streams. Everything is widened to `f64` on load.

mod bundle;
mod container;
mod shard;
mod stream;

use std::path::Path;

use thiserror::Error;

pub use bundle::{import_gpt2, load_model, names, Activation, ArchDescriptor, Gpt2Config, ModelBundle, Norm, ARCH_METADATA_KEY, MODEL_FILE};
pub use container::{Container, Dtype, TensorRecord};
pub use shard::{load_activation_shard, save_activation_shard, ActivationMatrix};
pub use stream::{load_token_stream, manifest_path, StreamManifest, TokenStream};

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error("missing tensor {0}")]
    MissingTensor(String),
    #[error("unsupported dtype {0}")]
    DtypeUnsupported(String),
    #[error("non-finite value in {name} at flat index {index}")]
    NonFiniteValue { name: String, index: usize },
    #[error("token id {id} at position {position} is outside vocabulary of {vocab_size}")]
    OutOfRangeTokenId { position: usize, id: u32, vocab_size: usize },
    #[error("corrupt document boundary table: {0}")]
    CorruptBoundaryTable(String),
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
}

impl TensorIoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
