//! Trained generator checkpoints: a JSON manifest of `{name, shape, offset}`
//! entries next to one blob of little-endian `f32` values.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Matrix;
use crate::nn::ParamStore;
use crate::oversample::{gan_sample, tvae_sample, GanConfig, GanTransformerModel, Method, OversampleError, TvaeConfig, TvaeModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint: {0}")]
    CorruptManifest(String),
    #[error("tensor {name}: manifest shape {found:?}, model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("checkpoint version {found}, this build reads version {expected}")]
    VersionMismatch { expected: u32, found: u32 },
    #[error(transparent)]
    Model(#[from] OversampleError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: String,
    pub n_features: usize,
    pub config: serde_json::Value,
    /// Blob file name, relative to the manifest.
    pub blob: String,
    pub blob_bytes: usize,
    pub tensors: Vec<TensorEntry>,
}

/// A trained sampler that can be checkpointed.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum GenerativeModel {
    Gan(GanTransformerModel),
    Tvae(TvaeModel),
}

const DATA_MEAN: &str = "data.mean";
const DATA_STD: &str = "data.std";

impl GenerativeModel {
    pub fn method(&self) -> Method {
        match self {
            GenerativeModel::Gan(_) => Method::GanTransformer,
            GenerativeModel::Tvae(_) => Method::Tvae,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            GenerativeModel::Gan(m) => m.n_features,
            GenerativeModel::Tvae(m) => m.n_features,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<Matrix, OversampleError> {
        match self {
            GenerativeModel::Gan(m) => gan_sample(m, n, seed),
            GenerativeModel::Tvae(m) => tvae_sample(m, n, seed),
        }
    }

    fn config_json(&self) -> serde_json::Value {
        match self {
            GenerativeModel::Gan(m) => serde_json::to_value(&m.config),
            GenerativeModel::Tvae(m) => serde_json::to_value(&m.config),
        }
        .expect("configs serialize")
    }

    /// Every saved tensor in manifest order.
    fn tensors(&self) -> Vec<(String, Tensor)> {
        let from_store = |s: &ParamStore| s.iter().map(|(n, t)| (n.to_string(), t.clone())).collect::<Vec<_>>();
        match self {
            GenerativeModel::Gan(m) => {
                let mut out = from_store(&m.generator_params);
                out.extend(from_store(&m.discriminator_params));
                out.push((DATA_MEAN.into(), Tensor::from_vec(m.data_mean.clone())));
                out.push((DATA_STD.into(), Tensor::from_vec(m.data_std.clone())));
                out
            }
            GenerativeModel::Tvae(m) => from_store(&m.params),
        }
    }

    fn tensor_slots(&mut self) -> Vec<(String, &mut Tensor)> {
        fn slots(s: &mut ParamStore) -> Vec<(String, &mut Tensor)> {
            let names = s.names().to_vec();
            names.into_iter().zip(s.tensors_mut().iter_mut()).collect()
        }
        match self {
            GenerativeModel::Gan(m) => {
                let mut out = slots(&mut m.generator_params);
                out.extend(slots(&mut m.discriminator_params));
                out
            }
            GenerativeModel::Tvae(m) => slots(&mut m.params),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CheckpointError + '_ {
    move |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `path` (the manifest) and `path` with a `.bin` extension.
pub fn save_checkpoint(model: &GenerativeModel, path: &Path) -> Result<(), CheckpointError> {
    let blob_file = blob_path(path);
    let mut blob = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in model.tensors() {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        for v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.method().name().to_string(),
        n_features: model.n_features(),
        config: model.config_json(),
        blob: blob_file
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| CheckpointError::CorruptManifest(format!("bad checkpoint path {}", path.display())))?
            .to_string(),
        blob_bytes: blob.len(),
        tensors: entries,
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))?;
    fs::write(&blob_file, blob).map_err(io_err(&blob_file))?;
    Ok(())
}

fn read_manifest(path: &Path) -> Result<Manifest, CheckpointError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    // Check the version before the full schema so old files get a clear error.
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| CheckpointError::CorruptManifest(e.to_string()))?;
    if let Some(v) = raw.get("version").and_then(|v| v.as_u64()) {
        if v != CHECKPOINT_VERSION as u64 {
            return Err(CheckpointError::VersionMismatch {
                expected: CHECKPOINT_VERSION,
                found: v as u32,
            });
        }
    }
    serde_json::from_value(raw).map_err(|e| CheckpointError::CorruptManifest(e.to_string()))
}

pub fn load_checkpoint(path: &Path) -> Result<GenerativeModel, CheckpointError> {
    let manifest = read_manifest(path)?;
    let corrupt = |m: String| CheckpointError::CorruptManifest(m);
    let config_err = |e: serde_json::Error| CheckpointError::CorruptManifest(format!("config: {e}"));
    let mut model = match Method::parse(&manifest.model) {
        Some(Method::GanTransformer) => {
            let cfg: GanConfig = serde_json::from_value(manifest.config.clone()).map_err(config_err)?;
            GenerativeModel::Gan(GanTransformerModel::new(&cfg, manifest.n_features, 0)?)
        }
        Some(Method::Tvae) => {
            let cfg: TvaeConfig = serde_json::from_value(manifest.config.clone()).map_err(config_err)?;
            GenerativeModel::Tvae(TvaeModel::new(&cfg, manifest.n_features, 0)?)
        }
        _ => return Err(corrupt(format!("unknown model {:?}", manifest.model))),
    };
    let dir = path.parent().unwrap_or(Path::new("."));
    let blob_file = dir.join(&manifest.blob);
    let blob = fs::read(&blob_file).map_err(io_err(&blob_file))?;
    if blob.len() != manifest.blob_bytes {
        return Err(corrupt(format!("blob has {} bytes, manifest says {}", blob.len(), manifest.blob_bytes)));
    }

    let read = |e: &TensorEntry, expected: &[usize]| -> Result<Vec<f32>, CheckpointError> {
        if e.shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name: e.name.clone(),
                expected: expected.to_vec(),
                found: e.shape.clone(),
            });
        }
        let n: usize = e.shape.iter().product();
        let bytes = blob
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| corrupt(format!("tensor {} runs past the blob", e.name)))?;
        Ok(bytes.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect())
    };
    let find = |name: &str| {
        manifest
            .tensors
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| corrupt(format!("missing tensor {name}")))
    };

    let mut used = 0;
    for (name, slot) in model.tensor_slots() {
        let values = read(find(&name)?, slot.shape())?;
        slot.data_mut().copy_from_slice(&values);
        used += 1;
    }
    if let GenerativeModel::Gan(m) = &mut model {
        let f = [m.n_features];
        m.data_mean = read(find(DATA_MEAN)?, &f)?;
        m.data_std = read(find(DATA_STD)?, &f)?;
        used += 2;
    }
    if used != manifest.tensors.len() {
        return Err(corrupt(format!("{} tensors in manifest, model has {used}", manifest.tensors.len())));
    }
    Ok(model)
}
