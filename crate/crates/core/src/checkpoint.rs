//! Single-file checkpoint container: a UTF-8 JSON manifest line followed by
//! raw little-endian f32 tensor data concatenated in manifest order.
//!
//! The manifest carries the stage name, an echo of the training config, any
//! vocabularies the stage depends on, the content hash of the checkpoint
//! (`id`), and the ids of upstream checkpoints it was trained against.
//! Downstream stages verify those ids before use, so a stale or swapped
//! checkpoint fails loudly instead of producing silently wrong output.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// A named tensor. Values are held as f64 in memory and stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        let entry = TensorEntry { name: name.into(), shape, data };
        assert_eq!(
            entry.shape.iter().product::<usize>(),
            entry.data.len(),
            "tensor {} shape/data mismatch",
            entry.name
        );
        entry
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestTensor {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    stage: String,
    id: String,
    upstream: BTreeMap<String, String>,
    config: BTreeMap<String, String>,
    vocabs: BTreeMap<String, Vec<String>>,
    tensors: Vec<ManifestTensor>,
}

const FORMAT_TAG: &str = "story-pipeline-checkpoint-v1";

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// In-memory checkpoint contents.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: String,
    /// Content hash; empty until saved, populated after save/load.
    pub id: String,
    /// stage name -> id of the checkpoint this one was trained against.
    pub upstream: BTreeMap<String, String>,
    /// Flat echo of the config keys that shaped this artifact.
    pub config: BTreeMap<String, String>,
    /// Named vocabularies, e.g. "topic" or "generation".
    pub vocabs: BTreeMap<String, Vec<String>>,
    pub tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn new(stage: impl Into<String>) -> Self {
        Checkpoint {
            stage: stage.into(),
            id: String::new(),
            upstream: BTreeMap::new(),
            config: BTreeMap::new(),
            vocabs: BTreeMap::new(),
            tensors: Vec::new(),
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("stage {}: missing tensor {name:?}", self.stage)))
    }

    pub fn vocab(&self, name: &str) -> Result<&Vec<String>> {
        self.vocabs
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("stage {}: missing vocab {name:?}", self.stage)))
    }

    pub fn config_value(&self, key: &str) -> Result<&str> {
        self.config
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("stage {}: missing config key {key:?}", self.stage)))
    }

    pub fn config_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.config_value(key)?;
        raw.parse().map_err(|_| {
            Error::Checkpoint(format!(
                "stage {}: config key {key:?} has unparseable value {raw:?}",
                self.stage
            ))
        })
    }

    fn payload(&self) -> Vec<u8> {
        let total: usize = self.tensors.iter().map(|t| t.data.len() * 4).sum();
        let mut payload = Vec::with_capacity(total);
        for t in &self.tensors {
            for &v in &t.data {
                payload.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        payload
    }

    fn manifest(&self, id: String) -> Manifest {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let m = ManifestTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f32".to_string(),
                    offset,
                };
                offset += (t.data.len() * 4) as u64;
                m
            })
            .collect();
        Manifest {
            format: FORMAT_TAG.to_string(),
            stage: self.stage.clone(),
            id,
            upstream: self.upstream.clone(),
            config: self.config.clone(),
            vocabs: self.vocabs.clone(),
            tensors,
        }
    }

    /// Write the checkpoint and record its content hash in `self.id`.
    pub fn save(&mut self, path: &Path) -> Result<()> {
        let payload = self.payload();
        let unsigned = serde_json::to_string(&self.manifest(String::new()))
            .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(unsigned.as_bytes());
        hasher.update(&payload);
        let id = hex(&hasher.finalize());
        let signed = serde_json::to_string(&self.manifest(id.clone()))
            .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;

        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
        }
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(signed.as_bytes()).map_err(|e| Error::io(path, e))?;
        file.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        file.write_all(&payload).map_err(|e| Error::io(path, e))?;
        self.id = id;
        Ok(())
    }

    /// Read a checkpoint, verifying format tag, payload bounds, and that the
    /// stored id matches the recomputed content hash.
    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::io(path, e))?
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint(format!("{}: no manifest line", path.display())))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Checkpoint(format!("{}: bad manifest: {e}", path.display())))?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::Checkpoint(format!(
                "{}: unknown format {:?}",
                path.display(),
                manifest.format
            )));
        }
        let payload = &bytes[newline + 1..];

        let unsigned_manifest = Manifest { id: String::new(), ..manifest.clone() };
        let unsigned = serde_json::to_string(&unsigned_manifest)
            .map_err(|e| Error::Checkpoint(format!("manifest serialization: {e}")))?;
        let mut hasher = Sha256::new();
        hasher.update(unsigned.as_bytes());
        hasher.update(payload);
        let recomputed = hex(&hasher.finalize());
        if recomputed != manifest.id {
            return Err(Error::Checkpoint(format!(
                "{}: content hash mismatch (stored {}, recomputed {})",
                path.display(),
                manifest.id,
                recomputed
            )));
        }

        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for mt in &manifest.tensors {
            if mt.dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {} has unsupported dtype {:?}",
                    path.display(),
                    mt.name,
                    mt.dtype
                )));
            }
            let count: usize = mt.shape.iter().product();
            let start = mt.offset as usize;
            let end = start + count * 4;
            if end > payload.len() {
                return Err(Error::Checkpoint(format!(
                    "{}: tensor {} extends past payload end",
                    path.display(),
                    mt.name
                )));
            }
            let mut data = Vec::with_capacity(count);
            for chunk in payload[start..end].chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
            }
            tensors.push(TensorEntry { name: mt.name.clone(), shape: mt.shape.clone(), data });
        }

        Ok(Checkpoint {
            stage: manifest.stage,
            id: manifest.id,
            upstream: manifest.upstream,
            config: manifest.config,
            vocabs: manifest.vocabs,
            tensors,
        })
    }
}

/// Load the checkpoint for `stage` from `dir/<stage>.ckpt`, mapping a
/// missing file to the missing-checkpoint error.
pub fn load_stage(dir: &Path, stage: &str) -> Result<Checkpoint> {
    let path = stage_path(dir, stage);
    if !path.exists() {
        return Err(Error::MissingCheckpoint { stage: stage.to_string(), path });
    }
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.stage != stage {
        return Err(Error::Checkpoint(format!(
            "{}: manifest stage {:?} does not match expected {:?}",
            path.display(),
            ckpt.stage,
            stage
        )));
    }
    Ok(ckpt)
}

pub fn stage_path(dir: &Path, stage: &str) -> std::path::PathBuf {
    dir.join(format!("{stage}.ckpt"))
}

/// Verify that `downstream` was trained against `upstream_ckpt`.
pub fn verify_chain(downstream: &Checkpoint, upstream_ckpt: &Checkpoint) -> Result<()> {
    match downstream.upstream.get(&upstream_ckpt.stage) {
        None => Err(Error::ChainMismatch(format!(
            "checkpoint {} records no upstream id for stage {}",
            downstream.stage, upstream_ckpt.stage
        ))),
        Some(recorded) if *recorded != upstream_ckpt.id => Err(Error::ChainMismatch(format!(
            "checkpoint {} was trained against {} id {}.., but the loaded {} has id {}..",
            downstream.stage,
            upstream_ckpt.stage,
            &recorded[..recorded.len().min(12)],
            upstream_ckpt.stage,
            &upstream_ckpt.id[..upstream_ckpt.id.len().min(12)]
        ))),
        Some(_) => Ok(()),
    }
}
