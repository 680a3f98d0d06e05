//! Flat tensor container: an 8-byte little-endian header length, a JSON
//! header mapping tensor names to `{dtype, shape, data_offsets}`, then the
//! little-endian payload. The layout is the one used by `.safetensors`
//! files, so GPT-2 family exports can be read directly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::TensorIoError;

const METADATA_KEY: &str = "__metadata__";

/// Upper bound on the JSON header; anything larger is treated as corrupt.
const MAX_HEADER_BYTES: u64 = 100 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "F32")]
    F32,
    #[serde(rename = "F64")]
    F64,
    #[serde(rename = "U32")]
    U32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 | Dtype::U32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn parse(tag: &str) -> Result<Self, TensorIoError> {
        match tag {
            "F32" => Ok(Dtype::F32),
            "F64" => Ok(Dtype::F64),
            "U32" => Ok(Dtype::U32),
            other => Err(TensorIoError::DtypeUnsupported(other.to_string())),
        }
    }
}

/// One named tensor. Values are held widened to `f64`; `dtype` records the
/// on-disk element type so that a save reproduces the original bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorRecord {
    pub fn new(name: impl Into<String>, dtype: Dtype, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorIoError> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorIoError::ShapeMismatch {
                name,
                expected: shape,
                found: vec![data.len()],
            });
        }
        Ok(Self { name, dtype, shape, data })
    }

    pub fn f64(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorIoError> {
        Self::new(name, Dtype::F64, shape, data)
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self.dtype {
            Dtype::F32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for &v in &self.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Dtype::U32 => {
                for &v in &self.data {
                    out.extend_from_slice(&(v as u32).to_le_bytes());
                }
            }
        }
    }

    fn decode(name: &str, dtype: Dtype, shape: Vec<usize>, bytes: &[u8]) -> Result<Self, TensorIoError> {
        let data: Vec<f64> = match dtype {
            Dtype::F32 => bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
            Dtype::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect(),
            Dtype::U32 => bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect(),
        };
        Self::new(name, dtype, shape, data)
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    dtype: Dtype,
    shape: Vec<usize>,
    data_offsets: [u64; 2],
}

/// Tensors plus string metadata, keyed by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Container {
    pub fn insert(&mut self, record: TensorRecord) {
        self.tensors.insert(record.name.clone(), record);
    }

    /// Serializes with tensors laid out in name order, so equal containers
    /// always produce identical bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = serde_json::Map::new();
        if !self.metadata.is_empty() {
            let meta: serde_json::Map<String, Value> = self.metadata.iter().map(|(k, v)| (k.clone(), Value::String(v.clone()))).collect();
            header.insert(METADATA_KEY.to_string(), Value::Object(meta));
        }
        let mut payload = Vec::new();
        for (name, rec) in &self.tensors {
            let begin = payload.len() as u64;
            rec.encode_into(&mut payload);
            let entry = HeaderEntry {
                dtype: rec.dtype,
                shape: rec.shape.clone(),
                data_offsets: [begin, payload.len() as u64],
            };
            header.insert(name.clone(), serde_json::to_value(entry).expect("header entry"));
        }
        let mut json = serde_json::to_vec(&Value::Object(header)).expect("header json");
        // pad so the payload starts 8-byte aligned
        while !(8 + json.len()).is_multiple_of(8) {
            json.push(b' ');
        }
        let mut out = Vec::with_capacity(8 + json.len() + payload.len());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorIoError> {
        if bytes.len() < 8 {
            return Err(TensorIoError::MalformedHeader("file shorter than length prefix".into()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"));
        if header_len > MAX_HEADER_BYTES || 8 + header_len > bytes.len() as u64 {
            return Err(TensorIoError::MalformedHeader(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            )));
        }
        let header_end = 8 + header_len as usize;
        let header: serde_json::Map<String, Value> =
            serde_json::from_slice(&bytes[8..header_end]).map_err(|e| TensorIoError::MalformedHeader(e.to_string()))?;
        let payload = &bytes[header_end..];

        let mut container = Container::default();
        for (name, value) in header {
            if name == METADATA_KEY {
                let meta = value
                    .as_object()
                    .ok_or_else(|| TensorIoError::MalformedHeader("metadata is not an object".into()))?;
                for (k, v) in meta {
                    let s = v
                        .as_str()
                        .ok_or_else(|| TensorIoError::MalformedHeader(format!("metadata value for {k} is not a string")))?;
                    container.metadata.insert(k.clone(), s.to_string());
                }
                continue;
            }
            let tag = value
                .get("dtype")
                .and_then(Value::as_str)
                .ok_or_else(|| TensorIoError::MalformedHeader(format!("{name}: missing dtype")))?;
            let dtype = Dtype::parse(tag)?;
            let shape: Vec<usize> = serde_json::from_value(value.get("shape").cloned().unwrap_or(Value::Null))
                .map_err(|e| TensorIoError::MalformedHeader(format!("{name}: shape: {e}")))?;
            let offsets: [u64; 2] = serde_json::from_value(value.get("data_offsets").cloned().unwrap_or(Value::Null))
                .map_err(|e| TensorIoError::MalformedHeader(format!("{name}: data_offsets: {e}")))?;
            let [begin, end] = offsets;
            if begin > end || end > payload.len() as u64 {
                return Err(TensorIoError::MalformedHeader(format!(
                    "{name}: offsets [{begin}, {end}) outside payload of {} bytes",
                    payload.len()
                )));
            }
            let numel: usize = shape.iter().product();
            let nbytes = (end - begin) as usize;
            if nbytes != numel * dtype.size() {
                return Err(TensorIoError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: vec![nbytes / dtype.size()],
                });
            }
            let rec = TensorRecord::decode(&name, dtype, shape, &payload[begin as usize..end as usize])?;
            container.tensors.insert(name, rec);
        }
        Ok(container)
    }

    pub fn write(&self, path: &Path) -> Result<(), TensorIoError> {
        fs::write(path, self.to_bytes()).map_err(|e| TensorIoError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self, TensorIoError> {
        let bytes = fs::read(path).map_err(|e| TensorIoError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
