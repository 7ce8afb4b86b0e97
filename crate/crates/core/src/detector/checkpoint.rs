//! Weight persistence: a JSON manifest of tensor records next to a raw
//! little-endian `f32` blob, plus the detector config and run manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{ParamStore, Shape, Tensor};

use super::config::DetectorConfig;
use super::model::Detector;

pub const WEIGHTS_MANIFEST: &str = "weights.json";
pub const WEIGHTS_BLOB: &str = "weights.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_MANIFEST: &str = "run_manifest.json";
const FORMAT: &str = "pcbdet-weights-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: u64,
    pub bytes: u64,
    pub sha256: String,
    pub frozen: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsManifest {
    pub format: String,
    pub dtype: String,
    pub tensors: Vec<TensorRecord>,
    /// Git-style content hash of the blob: sha256 over `"blob <len>\0" + bytes`.
    pub blob_sha256: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    format!("{:x}", h.finalize())
}

/// Serialises `store` in name order; returns the manifest that was written.
pub fn save_weights(store: &ParamStore<f32>, dir: &Path) -> Result<WeightsManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut blob = Vec::with_capacity(store.count(false) * 4);
    let mut tensors = Vec::with_capacity(store.len());
    for (name, p) in store.iter() {
        let start = blob.len();
        for v in p.tensor.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorRecord {
            name: name.to_string(),
            shape: p.tensor.shape().0,
            offset: start as u64,
            bytes: (blob.len() - start) as u64,
            sha256: sha256_hex(&blob[start..]),
            frozen: p.frozen,
        });
    }
    let manifest = WeightsManifest {
        format: FORMAT.into(),
        dtype: "f32le".into(),
        tensors,
        blob_sha256: content_hash(&blob),
    };
    let blob_path = dir.join(WEIGHTS_BLOB);
    fs::write(&blob_path, &blob).map_err(|e| Error::io(&blob_path, e))?;
    let man_path = dir.join(WEIGHTS_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::format(&man_path, e.to_string()))?;
    fs::write(&man_path, text + "\n").map_err(|e| Error::io(&man_path, e))?;
    Ok(manifest)
}

pub fn read_weights_manifest(dir: &Path) -> Result<WeightsManifest> {
    let path = dir.join(WEIGHTS_MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// Reads a store written by [`save_weights`], verifying every checksum.
pub fn load_weights(dir: &Path) -> Result<ParamStore<f32>> {
    let manifest = read_weights_manifest(dir)?;
    let blob_path = dir.join(WEIGHTS_BLOB);
    if manifest.format != FORMAT || manifest.dtype != "f32le" {
        return Err(Error::format(dir.join(WEIGHTS_MANIFEST), format!("unsupported format {} / {}", manifest.format, manifest.dtype)));
    }
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    if content_hash(&blob) != manifest.blob_sha256 {
        return Err(Error::format(&blob_path, "blob checksum mismatch"));
    }
    let mut store = ParamStore::new();
    for r in &manifest.tensors {
        let shape = Shape(r.shape);
        let (start, len) = (r.offset as usize, r.bytes as usize);
        if len != shape.numel() * 4 || start.checked_add(len).map_or(true, |end| end > blob.len()) {
            return Err(Error::format(&blob_path, format!("record {} ({shape}) does not fit the blob", r.name)));
        }
        let bytes = &blob[start..start + len];
        if sha256_hex(bytes) != r.sha256 {
            return Err(Error::format(&blob_path, format!("checksum mismatch for {}", r.name)));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        store.insert(r.name.clone(), Tensor::from_vec(shape, data)?)?;
        store.get_mut(&r.name)?.frozen = r.frozen;
    }
    Ok(store)
}

/// Detector config plus its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: DetectorConfig,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn detector(&self) -> Result<Detector> {
        Detector::new(&self.config)
    }
}

/// Writes `config.toml`, `weights.json` and `weights.bin` into `dir`.
pub fn save_checkpoint(dir: &Path, config: &DetectorConfig, params: &ParamStore<f32>) -> Result<WeightsManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    save_weights(params, dir)
}

/// Loads a checkpoint and checks its tensors against the architecture its config describes.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let config = DetectorConfig::load(&dir.join(CONFIG_FILE))?;
    let params = load_weights(dir)?;
    let expected = Detector::new(&config)?.init_params::<f32>(0)?;
    let names: Vec<_> = params.names().collect();
    let want: Vec<_> = expected.names().collect();
    if names != want {
        let missing: Vec<_> = want.iter().filter(|n| !params.contains(n)).take(3).collect();
        let extra: Vec<_> = names.iter().filter(|n| !expected.contains(n)).take(3).collect();
        return Err(Error::format(
            dir.join(WEIGHTS_MANIFEST),
            format!("weights do not match config: missing {missing:?}, unexpected {extra:?}"),
        ));
    }
    for (name, p) in expected.iter() {
        let got = params.tensor(name)?.shape();
        if got != p.tensor.shape() {
            return Err(Error::format(dir.join(WEIGHTS_MANIFEST), format!("{name}: shape {got}, config expects {}", p.tensor.shape())));
        }
    }
    Ok(Checkpoint { config, params })
}

/// Everything needed to re-run a training job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// Full run config as written by the caller.
    pub run_config: String,
    pub run_config_sha256: String,
    pub scheduler: String,
    pub weights_sha256: String,
    pub epochs_completed: usize,
}

impl RunManifest {
    pub fn new(seed: u64, run_config: String, scheduler: String, weights: &WeightsManifest, epochs_completed: usize) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            run_config_sha256: sha256_hex(run_config.as_bytes()),
            run_config,
            scheduler,
            weights_sha256: weights.blob_sha256.clone(),
            epochs_completed,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::format(path, e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}
