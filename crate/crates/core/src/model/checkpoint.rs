//! Checkpoint directories: `manifest.json` plus `weights.bin`.
//!
//! `weights.bin` is every parameter as little-endian `f32`, concatenated in
//! manifest order. The manifest records the spec, the class table and one
//! entry per tensor with its byte range and trainable flag.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{HybridSpec, Model, ModelError};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("unsupported checkpoint format version {0} (expected {FORMAT_VERSION})")]
    UnknownVersion(u32),
    #[error("weights blob is {actual} bytes but the manifest describes {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("tensor `{name}`: manifest entry is inconsistent ({msg})")]
    BadEntry { name: String, msg: String },
    #[error("tensor `{name}`: manifest shape {manifest:?} disagrees with the model shape {model:?}")]
    ShapeDisagreement {
        name: String,
        manifest: Vec<usize>,
        model: Vec<usize>,
    },
    #[error("tensor `{0}` is required by the spec but missing from the manifest")]
    MissingTensor(String),
    #[error("manifest lists `{0}`, which the spec does not define")]
    UnknownTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub byte_offset: usize,
    pub byte_length: usize,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: HybridSpec,
    pub class_names: Vec<String>,
    pub tensors: Vec<TensorEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Serializes the model into the manifest and the raw weight bytes.
pub fn encode(model: &Model) -> (Manifest, Vec<u8>) {
    let mut blob = Vec::with_capacity(model.param_count() * 4);
    let mut tensors = Vec::new();
    for (name, t, trainable) in model.named_params() {
        let offset = blob.len();
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            dtype: "f32".into(),
            byte_offset: offset,
            byte_length: blob.len() - offset,
            trainable,
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: model.spec.clone(),
        class_names: model.class_names.clone(),
        tensors,
    };
    (manifest, blob)
}

/// Rebuilds a model from a manifest and weight bytes, validating every entry.
pub fn decode(manifest: &Manifest, blob: &[u8]) -> Result<Model, CheckpointError> {
    if manifest.format_version != FORMAT_VERSION {
        return Err(CheckpointError::UnknownVersion(manifest.format_version));
    }
    let expected: usize = manifest.tensors.iter().map(|t| t.byte_length).sum();
    if expected != blob.len() {
        return Err(CheckpointError::LengthMismatch {
            expected,
            actual: blob.len(),
        });
    }
    let mut model = Model::<f32>::build(&manifest.spec, 0)?;
    model.set_class_names(manifest.class_names.clone())?;

    let mut by_name: std::collections::HashMap<&str, &TensorEntry> =
        manifest.tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    for layer in model.layers_mut() {
        let mut trainable = None;
        for p in &mut layer.params {
            let name = format!("{}/{}", layer.name, p.name);
            let entry = by_name
                .remove(name.as_str())
                .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
            if entry.shape != p.value.shape() {
                return Err(CheckpointError::ShapeDisagreement {
                    name,
                    manifest: entry.shape.clone(),
                    model: p.value.shape().to_vec(),
                });
            }
            let bad = |msg: &str| CheckpointError::BadEntry {
                name: name.clone(),
                msg: msg.into(),
            };
            if entry.dtype != "f32" {
                return Err(bad("dtype must be f32"));
            }
            if entry.byte_length != p.value.len() * 4 {
                return Err(bad("byte_length does not match shape"));
            }
            let bytes = blob
                .get(entry.byte_offset..entry.byte_offset + entry.byte_length)
                .ok_or_else(|| bad("byte range outside the weights blob"))?;
            for (dst, chunk) in p.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *dst = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            }
            trainable = Some(entry.trainable);
        }
        if let Some(t) = trainable {
            layer.trainable = t;
        }
    }
    if let Some(name) = by_name.keys().min() {
        return Err(CheckpointError::UnknownTensor(name.to_string()));
    }
    model.check_fusion_width()?;
    Ok(model)
}

/// Writes `dir/manifest.json` and `dir/weights.bin`. The files are first
/// written to a sibling temporary directory which then replaces `dir`.
pub fn save_checkpoint(model: &Model, dir: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let dir = dir.as_ref();
    let (manifest, blob) = encode(model);
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let tmp = parent.join(format!(".{name}.tmp-{}", std::process::id()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(&tmp))?;
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    let mpath = tmp.join(MANIFEST_FILE);
    fs::write(&mpath, json).map_err(io_err(&mpath))?;
    let wpath = tmp.join(WEIGHTS_FILE);
    fs::write(&wpath, &blob).map_err(io_err(&wpath))?;

    if dir.exists() {
        let old = parent.join(format!(".{name}.old-{}", std::process::id()));
        fs::rename(dir, &old).map_err(io_err(dir))?;
        fs::rename(&tmp, dir).map_err(io_err(dir))?;
        fs::remove_dir_all(&old).map_err(io_err(&old))?;
    } else {
        fs::rename(&tmp, dir).map_err(io_err(dir))?;
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Model, CheckpointError> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| CheckpointError::Manifest {
        path: mpath.clone(),
        source,
    })?;
    let wpath = dir.join(WEIGHTS_FILE);
    let blob = fs::read(&wpath).map_err(io_err(&wpath))?;
    decode(&manifest, &blob)
}
