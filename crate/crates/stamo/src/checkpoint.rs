//! Language-neutral checkpoint directories.
//!
//! A checkpoint is a directory holding `weights.bin` (raw little-endian f32
//! tensor blobs back to back), `index.json` (name, shape, dtype, byte
//! offsets, in serialization order) plus a `config.json` snapshot of
//! whatever configuration produced the weights. Training loops may add a
//! `train_log.csv` next to these.

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Real;
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_len: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub tensors: Vec<TensorEntry>,
}

pub const FORMAT_TAG: &str = "stamo-ckpt-1";

/// Write every parameter in `store` plus a config snapshot.
pub fn save<T: Real, C: Serialize>(dir: &Path, store: &ParamStore<T>, config: &C) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut blob: Vec<u8> = Vec::new();
    let mut tensors = Vec::new();
    for (_, p) in store.iter() {
        let byte_offset = blob.len();
        for v in p.value.iter() {
            blob.extend_from_slice(&(v.to_f64_() as f32).to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: p.name.clone(),
            shape: [p.value.nrows(), p.value.ncols()],
            dtype: "f32".to_string(),
            byte_offset,
            byte_len: blob.len() - byte_offset,
            trainable: p.trainable,
        });
    }
    let index = CheckpointIndex { format: FORMAT_TAG.to_string(), tensors };

    let weights_path = dir.join("weights.bin");
    fs::write(&weights_path, &blob).map_err(|e| Error::io(weights_path.display().to_string(), e))?;
    write_json(&dir.join("index.json"), &index)?;
    write_json(&dir.join("config.json"), config)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read back raw tensors by name.
pub fn load_tensors<T: Real>(dir: &Path) -> Result<Vec<(String, Array2<T>, bool)>> {
    let index_path = dir.join("index.json");
    let text = fs::read_to_string(&index_path)
        .map_err(|e| Error::io(index_path.display().to_string(), e))?;
    let index: CheckpointIndex = serde_json::from_str(&text)?;
    if index.format != FORMAT_TAG {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format '{}'",
            index.format
        )));
    }
    let weights_path = dir.join("weights.bin");
    let blob =
        fs::read(&weights_path).map_err(|e| Error::io(weights_path.display().to_string(), e))?;

    let mut out = Vec::with_capacity(index.tensors.len());
    for entry in &index.tensors {
        if entry.dtype != "f32" {
            return Err(Error::Checkpoint(format!(
                "tensor {}: unsupported dtype {}",
                entry.name, entry.dtype
            )));
        }
        let n = entry.shape[0] * entry.shape[1];
        if entry.byte_len != n * 4 || entry.byte_offset + entry.byte_len > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {}: blob bounds are inconsistent",
                entry.name
            )));
        }
        let mut values = Vec::with_capacity(n);
        for i in 0..n {
            let o = entry.byte_offset + i * 4;
            let raw = [blob[o], blob[o + 1], blob[o + 2], blob[o + 3]];
            values.push(T::from_f64(f32::from_le_bytes(raw) as f64));
        }
        let arr = Array2::from_shape_vec((entry.shape[0], entry.shape[1]), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
        out.push((entry.name.clone(), arr, entry.trainable));
    }
    Ok(out)
}

/// Load the config snapshot stored next to the weights.
pub fn load_config<C: for<'de> Deserialize<'de>>(dir: &Path) -> Result<C> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Overwrite a freshly-constructed store with checkpoint values. Every
/// parameter must be present with a matching shape.
pub fn restore_into<T: Real>(dir: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let tensors = load_tensors::<T>(dir)?;
    let ids: Vec<(crate::tensor::ParamId, String, (usize, usize))> = store
        .iter()
        .map(|(id, p)| (id, p.name.clone(), p.value.dim()))
        .collect();
    for (id, name, dim) in ids {
        let found = tensors
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))?;
        if found.1.dim() != dim {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}': shape {:?} in checkpoint, model wants {:?}",
                found.1.dim(),
                dim
            )));
        }
        *store.value_mut(id) = found.1.clone();
    }
    Ok(())
}
