//! Tensor checkpoints: a JSON manifest next to one little-endian `f32` blob.
//!
//! Values are stored in single precision, so a save/load round trip rounds
//! every parameter to the nearest `f32` (relative error below `6e-8`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "tempcredit-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// Free-form model description (architecture, hyper-parameters, ...).
    pub meta: serde_json::Value,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub total_bytes: u64,
    pub tensors: Vec<TensorEntry>,
}

fn blob_path(manifest_path: &Path) -> PathBuf {
    manifest_path.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path with .bin extension>` (blob).
pub fn save(path: &Path, meta: serde_json::Value, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(tensors.len());
    for (name, t) in tensors {
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: blob.len() as u64,
        });
        for &x in t.data() {
            blob.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let bpath = blob_path(path);
    let manifest = Manifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        meta,
        blob: bpath
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
        total_bytes: blob.len() as u64,
        tensors: entries,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(&bpath, &blob)?;
    fs::write(path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Loads a checkpoint, validating the blob length and every tensor's extent.
pub fn load(path: &Path) -> Result<(Manifest, Vec<(String, Tensor)>)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", manifest.format)));
    }
    let bpath = path.with_file_name(&manifest.blob);
    let blob = fs::read(&bpath)?;
    if blob.len() as u64 != manifest.total_bytes {
        return Err(Error::Checkpoint(format!(
            "blob {} has {} bytes, manifest declares {}",
            bpath.display(),
            blob.len(),
            manifest.total_bytes
        )));
    }
    let mut out = Vec::with_capacity(manifest.tensors.len());
    let mut expected_offset = 0u64;
    for e in &manifest.tensors {
        if e.dtype != "f32" {
            return Err(Error::Checkpoint(format!("tensor {} has dtype {}", e.name, e.dtype)));
        }
        let numel: usize = e.shape.iter().product();
        let start = e.byte_offset as usize;
        let end = start + 4 * numel;
        if e.byte_offset != expected_offset || end > blob.len() {
            return Err(Error::Checkpoint(format!(
                "tensor {} at offset {} with {} elements does not fit the blob",
                e.name, e.byte_offset, numel
            )));
        }
        let data = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
        expected_offset = end as u64;
    }
    if expected_offset != manifest.total_bytes {
        return Err(Error::Checkpoint("trailing bytes in blob".into()));
    }
    Ok((manifest, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_loses_at_most_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let a = Tensor::new(vec![2, 3], vec![0.1, -2.5, 3.25, 1e-3, 7.0, -0.3333]).unwrap();
        save(&path, serde_json::json!({"kind": "test"}), &[("a".into(), a.clone())]).unwrap();
        let (manifest, tensors) = load(&path).unwrap();
        assert_eq!(manifest.meta["kind"], "test");
        assert_eq!(tensors[0].0, "a");
        for (x, y) in a.data().iter().zip(tensors[0].1.data()) {
            assert!((x - y).abs() <= 6e-8 * x.abs());
        }
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save(&path, serde_json::Value::Null, &[("a".into(), Tensor::zeros(&[4]))]).unwrap();
        let bin = path.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load(&path), Err(Error::Checkpoint(_))));
    }
}
