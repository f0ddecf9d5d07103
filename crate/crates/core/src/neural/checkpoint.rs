//! Binary layout: `SMCK`, u32 version, u64 manifest length, JSON manifest,
//! then every tensor's values as little-endian f64 in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuralError, Params, Tensor};

const MAGIC: &[u8; 4] = b"SMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config_hash: String,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    set: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub sets: BTreeMap<String, Params>,
}

/// Writes named parameter sets (e.g. online and target networks) to one file.
pub fn save_checkpoint(path: &Path, config_hash: &str, sets: &[(&str, &Params)]) -> Result<(), NeuralError> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (set, params) in sets {
        for (name, t) in params.iter() {
            tensors.push(Entry { set: set.to_string(), name: name.clone(), shape: t.shape().to_vec(), offset });
            offset += t.len();
        }
    }
    let manifest = Manifest { format_version: CHECKPOINT_VERSION, config_hash: config_hash.to_string(), tensors };
    let json = serde_json::to_vec(&manifest).map_err(|e| NeuralError::Format(e.to_string()))?;

    let mut buf = Vec::with_capacity(16 + json.len() + offset * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, params) in sets {
        for (_, t) in params.iter() {
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NeuralError> {
    let bytes = fs::read(path)?;
    let bad = |m: &str| NeuralError::Format(m.to_string());
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(NeuralError::Format(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body_start = 16usize.checked_add(len).filter(|e| *e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..body_start]).map_err(|e| NeuralError::Format(e.to_string()))?;
    let body = &bytes[body_start..];
    let mut sets: BTreeMap<String, Params> = BTreeMap::new();
    let mut expected_end = 0;
    for e in manifest.tensors {
        let n: usize = e.shape.iter().product();
        let (start, end) = (e.offset * 8, (e.offset + n) * 8);
        if end > body.len() {
            return Err(bad("truncated tensor data"));
        }
        expected_end = expected_end.max(end);
        let data = body[start..end].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        sets.entry(e.set).or_default().insert(e.name, Tensor::new(e.shape, data)?);
    }
    if expected_end != body.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(Checkpoint { config_hash: manifest.config_hash, sets })
}
