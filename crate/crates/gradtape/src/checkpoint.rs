//! Checkpoint files: one line of JSON header, then the raw little-endian
//! values of every tensor in header order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "gradtape-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: [usize; 2],
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub dtype: Dtype,
    pub seed: u64,
    pub step: u64,
    pub hyperparameters: serde_json::Value,
    pub tensors: Vec<TensorHeader>,
}

impl CheckpointHeader {
    pub fn new(store: &ParamStore, dtype: Dtype, seed: u64, step: u64, hyperparameters: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            dtype,
            seed,
            step,
            hyperparameters,
            tensors: store
                .iter()
                .map(|(_, e)| TensorHeader {
                    name: e.name.clone(),
                    shape: e.value.shape(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    header: &CheckpointHeader,
    store: &ParamStore,
) -> Result<(), CheckpointError> {
    if header.tensors.len() != store.len() {
        return Err(CheckpointError::Mismatch(format!(
            "header lists {} tensors, store has {}",
            header.tensors.len(),
            store.len()
        )));
    }
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n")?;
    for ((_, e), h) in store.iter().zip(&header.tensors) {
        if e.name != h.name || e.value.shape() != h.shape {
            return Err(CheckpointError::Mismatch(format!("tensor {} does not match header", e.name)));
        }
        let mut buf = Vec::with_capacity(e.value.len() * header.dtype.width());
        for &v in e.value.data() {
            match header.dtype {
                Dtype::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
                Dtype::F64 => buf.extend_from_slice(&v.to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(CheckpointHeader, ParamStore), CheckpointError> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(CheckpointError::Unsupported("missing header line".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&line)?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(CheckpointError::Unsupported(format!("format {:?}", header.format)));
    }
    let width = header.dtype.width();
    let mut store = ParamStore::new();
    for t in &header.tensors {
        let count = t.shape[0] * t.shape[1];
        let mut raw = vec![0u8; count * width];
        r.read_exact(&mut raw)?;
        let values = raw
            .chunks_exact(width)
            .map(|b| match header.dtype {
                Dtype::F32 => f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64,
                Dtype::F64 => f64::from_le_bytes(b.try_into().expect("8 bytes")),
            })
            .collect();
        let value = Tensor::from_vec(t.shape[0], t.shape[1], values)
            .map_err(|e| CheckpointError::Mismatch(e.to_string()))?;
        store.add(t.name.clone(), value, t.trainable);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Mismatch("trailing bytes after last tensor".into()));
    }
    Ok((header, store))
}
