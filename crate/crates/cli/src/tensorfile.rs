//! Named `f64` tensors stored as raw little-endian bytes, indexed by a
//! manifest of names, shapes and byte offsets.

use mapft_core::linalg::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(name: String, m: &Matrix) -> Self {
        Self {
            name,
            rows: m.rows(),
            cols: m.cols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        Ok(Matrix::new(self.rows, self.cols, self.data.clone())?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset into the payload.
    pub offset: usize,
    /// Number of `f64` elements.
    pub len: usize,
}

pub fn encode(tensors: &[Tensor]) -> (Vec<TensorEntry>, Vec<u8>) {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut bytes = Vec::new();
    for t in tensors {
        entries.push(TensorEntry {
            name: t.name.clone(),
            rows: t.rows,
            cols: t.cols,
            offset: bytes.len(),
            len: t.data.len(),
        });
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    (entries, bytes)
}

pub fn decode(entries: &[TensorEntry], bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        if e.rows.checked_mul(e.cols) != Some(e.len) {
            return Err(CliError::Checkpoint(format!(
                "tensor {} declares {}x{} but {} elements",
                e.name, e.rows, e.cols, e.len
            )));
        }
        let end = e.len.checked_mul(8).and_then(|n| n.checked_add(e.offset));
        let Some(chunk) = end.and_then(|end| bytes.get(e.offset..end)) else {
            return Err(CliError::Checkpoint(format!(
                "tensor {} lies outside the payload",
                e.name
            )));
        };
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push(Tensor {
            name: e.name.clone(),
            rows: e.rows,
            cols: e.cols,
            data,
        });
    }
    Ok(out)
}
