//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `MGPPCKPT`, a little-endian `u32` format
//! version, a little-endian `u64` manifest length, the JSON manifest
//! (names, shapes, prunable flags), then for every tensor in manifest order
//! its values as little-endian `f64` followed by its mask as a bitmap of
//! `⌈len/8⌉` bytes, least significant bit first.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::params::{Param, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MGPPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    prunable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    tensors: Vec<ManifestEntry>,
}

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let manifest = Manifest {
        version: FORMAT_VERSION,
        tensors: params
            .iter()
            .map(|p| ManifestEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                prunable: p.prunable,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for p in params {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut bits = vec![0u8; p.mask.len().div_ceil(8)];
        for (i, &keep) in p.mask.iter().enumerate() {
            if keep {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        out.extend_from_slice(&bits);
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
    if bytes.len() < n {
        return Err(CheckpointError::Corrupt(format!("truncated while reading {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<ParamStore, CheckpointError> {
    let b = &mut bytes;
    if take(b, 8, "magic")? != MAGIC {
        return Err(CheckpointError::Corrupt("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version(version));
    }
    let len = u64::from_le_bytes(take(b, 8, "manifest length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| CheckpointError::Corrupt("manifest too large".into()))?;
    let manifest: Manifest = serde_json::from_slice(take(b, len, "manifest")?)
        .map_err(|e| CheckpointError::Corrupt(format!("manifest: {e}")))?;
    if manifest.version != version {
        return Err(CheckpointError::Corrupt("manifest version mismatch".into()));
    }
    let mut store = ParamStore::new();
    for entry in manifest.tensors {
        let n = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::Corrupt(format!("shape of {} overflows", entry.name)))?;
        let raw = take(b, n.saturating_mul(8), &entry.name)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let bits = take(b, n.div_ceil(8), &entry.name)?;
        let mask: Vec<bool> = (0..n).map(|i| bits[i / 8] >> (i % 8) & 1 == 1).collect();
        if !entry.prunable && mask.iter().any(|&m| !m) {
            return Err(CheckpointError::Corrupt(format!(
                "{} is not prunable but has pruned bits",
                entry.name
            )));
        }
        let tensor = Tensor::new(entry.shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        store
            .insert_param(Param {
                name: entry.name,
                tensor,
                prunable: entry.prunable,
                mask,
            })
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
    }
    if !b.is_empty() {
        return Err(CheckpointError::Corrupt(format!("{} trailing bytes", b.len())));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(params))?;
    f.sync_all()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}
