use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::TensorIoError;

/// Sidecar manifest stored next to the raw `u32` id file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamManifest {
    pub vocab_size: usize,
    pub n_tokens: usize,
    /// Document start offsets.
    pub doc_boundaries: Vec<usize>,
}

/// Pre-tokenized corpus: token ids plus document start offsets.
///
/// An empty boundary table means the whole stream is one document.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStream {
    pub ids: Vec<u32>,
    pub doc_boundaries: Vec<usize>,
    pub vocab_size: usize,
}

impl TokenStream {
    pub fn new(ids: Vec<u32>, doc_boundaries: Vec<usize>, vocab_size: usize) -> Result<Self, TensorIoError> {
        if let Some((pos, &id)) = ids.iter().enumerate().find(|(_, &id)| id as usize >= vocab_size) {
            return Err(TensorIoError::OutOfRangeTokenId { position: pos, id, vocab_size });
        }
        if let Some(w) = doc_boundaries.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TensorIoError::CorruptBoundaryTable(format!(
                "offsets not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = doc_boundaries.last() {
            if last > ids.len() {
                return Err(TensorIoError::CorruptBoundaryTable(format!("offset {last} beyond stream length {}", ids.len())));
            }
        }
        if let Some(&first) = doc_boundaries.first() {
            if first != 0 {
                return Err(TensorIoError::CorruptBoundaryTable(format!("first document starts at {first}, not 0")));
            }
        }
        Ok(Self {
            ids,
            doc_boundaries,
            vocab_size,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Non-empty documents in stream order.
    pub fn documents(&self) -> Vec<&[u32]> {
        if self.ids.is_empty() {
            return Vec::new();
        }
        if self.doc_boundaries.is_empty() {
            return vec![&self.ids[..]];
        }
        let mut ends: Vec<usize> = self.doc_boundaries[1..].to_vec();
        ends.push(self.ids.len());
        self.doc_boundaries
            .iter()
            .zip(ends)
            .filter(|(&s, e)| *e > s)
            .map(|(&s, e)| &self.ids[s..e])
            .collect()
    }

    /// Documents cut into consecutive windows of at most `max_context` tokens.
    pub fn windows(&self, max_context: usize) -> Vec<&[u32]> {
        self.documents().into_iter().flat_map(|doc| doc.chunks(max_context.max(1))).collect()
    }

    pub fn manifest(&self) -> StreamManifest {
        StreamManifest {
            vocab_size: self.vocab_size,
            n_tokens: self.ids.len(),
            doc_boundaries: self.doc_boundaries.clone(),
        }
    }

    /// Writes `<path>` (little-endian `u32` ids) and the JSON manifest
    /// returned by [`manifest_path`].
    pub fn save(&self, path: &Path) -> Result<(), TensorIoError> {
        let bytes: Vec<u8> = self.ids.iter().flat_map(|id| id.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| TensorIoError::io(path, e))?;
        let mpath = manifest_path(path);
        let json = serde_json::to_vec_pretty(&self.manifest()).expect("manifest json");
        fs::write(&mpath, json).map_err(|e| TensorIoError::io(&mpath, e))
    }
}

/// `corpus.bin` → `corpus.json`.
pub fn manifest_path(ids_path: &Path) -> PathBuf {
    ids_path.with_extension("json")
}

/// Loads a stream; `path` may name either the id file or its manifest.
pub fn load_token_stream(path: &Path) -> Result<TokenStream, TensorIoError> {
    let ids_path = if path.extension().is_some_and(|e| e == "json") {
        path.with_extension("bin")
    } else {
        path.to_path_buf()
    };
    let mpath = manifest_path(&ids_path);
    let manifest = fs::read(&mpath).map_err(|e| TensorIoError::io(&mpath, e))?;
    let manifest: StreamManifest = serde_json::from_slice(&manifest).map_err(|e| TensorIoError::CorruptBoundaryTable(format!("{}: {e}", mpath.display())))?;
    let bytes = fs::read(&ids_path).map_err(|e| TensorIoError::io(&ids_path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(TensorIoError::MalformedHeader(format!(
            "{}: {} bytes is not a whole number of u32 ids",
            ids_path.display(),
            bytes.len()
        )));
    }
    let ids: Vec<u32> = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if ids.len() != manifest.n_tokens {
        return Err(TensorIoError::CorruptBoundaryTable(format!(
            "manifest declares {} tokens, file holds {}",
            manifest.n_tokens,
            ids.len()
        )));
    }
    TokenStream::new(ids, manifest.doc_boundaries, manifest.vocab_size)
}
