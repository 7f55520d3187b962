//! Weight archives: a directory holding `manifest.json` (name, shape,
//! dtype and byte offset per tensor) and `weights.bin` (little-endian
//! `f64`, row-major, concatenated in manifest order).

use std::path::Path;

use delaycast_core::nn::ParamStore;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::fsutil;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub tensors: Vec<TensorEntry>,
}

/// Writes every parameter of `store` under `dir`.
pub fn save(dir: &Path, store: &ParamStore) -> Result<()> {
    let mut bytes = Vec::with_capacity(store.num_scalars() * 8);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, t) in store.iter() {
        tensors.push(TensorEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            dtype: "f64".into(),
            offset: bytes.len() as u64,
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fsutil::write(&dir.join("weights.bin"), &bytes)?;
    fsutil::write_json(
        &dir.join("manifest.json"),
        &Manifest {
            format_version: FORMAT_VERSION,
            tensors,
        },
    )
}

/// Overwrites the parameters of `store` with the archive under `dir`. The
/// archive must hold exactly the same names and shapes.
pub fn load_into(dir: &Path, store: &mut ParamStore) -> Result<()> {
    let manifest: Manifest = fsutil::read_json(&dir.join("manifest.json"))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(CliError::Data(format!(
            "weight archive version {} is not supported (expected {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    let bytes = fsutil::read(&dir.join("weights.bin"))?;
    if manifest.tensors.len() != store.len() {
        return Err(CliError::Data(format!(
            "archive has {} tensors, model expects {}",
            manifest.tensors.len(),
            store.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for e in &manifest.tensors {
        if !seen.insert(e.name.as_str()) {
            return Err(CliError::Data(format!("{} appears twice in the archive", e.name)));
        }
        if e.dtype != "f64" {
            return Err(CliError::Data(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let start = usize::try_from(e.offset).map_err(|_| CliError::Data("offset overflow".into()))?;
        let end = start + n * 8;
        let raw = bytes
            .get(start..end)
            .ok_or_else(|| CliError::Data(format!("{}: weights.bin is truncated", e.name)))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.set(&e.name, &e.shape, data)?;
    }
    Ok(())
}
