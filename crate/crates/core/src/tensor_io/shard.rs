use std::path::Path;

use ndarray::Array2;

use super::container::{Container, Dtype, TensorRecord};
use super::TensorIoError;

const SHARD_TENSOR: &str = "activations";

/// A `[rows × cols]` activation matrix together with its storage dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    pub dtype: Dtype,
    pub values: Array2<f64>,
}

impl ActivationMatrix {
    pub fn f64(values: Array2<f64>) -> Self {
        Self { dtype: Dtype::F64, values }
    }

    /// Values are rounded to `f32` on construction so that they survive a
    /// save/load cycle unchanged.
    pub fn f32(values: Array2<f64>) -> Self {
        Self {
            dtype: Dtype::F32,
            values: values.mapv(|v| v as f32 as f64),
        }
    }
}

pub fn save_activation_shard(matrix: &ActivationMatrix, path: &Path) -> Result<(), TensorIoError> {
    if matrix.dtype == Dtype::U32 {
        return Err(TensorIoError::DtypeUnsupported("U32 activation shard".into()));
    }
    if let Some(index) = matrix.values.iter().position(|v| !v.is_finite()) {
        return Err(TensorIoError::NonFiniteValue {
            name: SHARD_TENSOR.into(),
            index,
        });
    }
    let (rows, cols) = matrix.values.dim();
    let data = matrix.values.iter().copied().collect();
    let mut c = Container::default();
    c.insert(TensorRecord::new(SHARD_TENSOR, matrix.dtype, vec![rows, cols], data)?);
    c.write(path)
}

pub fn load_activation_shard(path: &Path) -> Result<ActivationMatrix, TensorIoError> {
    let mut c = Container::read(path)?;
    let rec = c
        .tensors
        .remove(SHARD_TENSOR)
        .ok_or_else(|| TensorIoError::MissingTensor(SHARD_TENSOR.into()))?;
    if rec.dtype == Dtype::U32 {
        return Err(TensorIoError::DtypeUnsupported("U32 activation shard".into()));
    }
    if rec.shape.len() != 2 {
        return Err(TensorIoError::ShapeMismatch {
            name: rec.name,
            expected: vec![0, 0],
            found: rec.shape,
        });
    }
    let values = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data).expect("validated shape");
    Ok(ActivationMatrix { dtype: rec.dtype, values })
}
