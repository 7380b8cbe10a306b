//! Checkpoint files.
//!
//! Layout: magic `DGCK`, format version (u32 LE), header length (u64 LE), a
//! JSON header (configs, epoch, PRNG state, tensor directory), then every
//! tensor in the directory order in the `DGRT` tensor encoding.

use std::path::Path;

use dyngest_tensor::{serialize, Element, Tensor};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use super::GestureNet;
use crate::config::{NetworkConfig, Pipeline, TrainConfig};
use crate::error::{io_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Training progress stored alongside the weights.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed epochs.
    pub epoch: usize,
    pub rng: Option<Xoshiro256PlusPlus>,
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum TensorKind {
    Value,
    Momentum,
    RunningMean,
    RunningVar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    kind: TensorKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StatsEntry {
    name: String,
    initialized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    pipeline: Pipeline,
    network: NetworkConfig,
    state: TrainState,
    stats: Vec<StatsEntry>,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint<T: Element>(model: &GestureNet<T>, state: &TrainState) -> Vec<u8> {
    let store = model.store();
    let mut tensors = Vec::new();
    let mut body = Vec::new();
    for p in store.params() {
        tensors.push(TensorEntry { name: p.name.clone(), kind: TensorKind::Value });
        body.extend(serialize::encode(&p.value));
        tensors.push(TensorEntry { name: p.name.clone(), kind: TensorKind::Momentum });
        body.extend(serialize::encode(&p.momentum));
    }
    for s in store.all_stats() {
        for (kind, v) in [(TensorKind::RunningMean, &s.mean), (TensorKind::RunningVar, &s.var)] {
            tensors.push(TensorEntry { name: s.name.clone(), kind });
            body.extend(serialize::encode(&Tensor::new(vec![v.len()], v.clone()).expect("stats vector")));
        }
    }
    let header = Header {
        pipeline: model.pipeline(),
        network: model.config().clone(),
        state: state.clone(),
        stats: store.all_stats().iter().map(|s| StatsEntry { name: s.name.clone(), initialized: s.initialized }).collect(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + body.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&body);
    out
}

pub fn save_checkpoint<T: Element>(path: &Path, model: &GestureNet<T>, state: &TrainState) -> Result<()> {
    let bytes = encode_checkpoint(model, state);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(format!("writing {}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(io_err(format!("renaming {}", tmp.display())))
}

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format { offset, message: message.into() }
}

/// Field paths whose values differ between two JSON documents.
fn differing_fields(a: &serde_json::Value, b: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    use serde_json::Value;
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
            keys.sort();
            keys.dedup();
            for k in keys {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match (x.get(k), y.get(k)) {
                    (Some(u), Some(v)) => differing_fields(u, v, &path, out),
                    _ => out.push(path),
                }
            }
        }
        _ if a != b => out.push(prefix.to_string()),
        _ => {}
    }
}

pub fn decode_checkpoint<T: Element>(
    bytes: &[u8],
    expected: Option<(&NetworkConfig, Pipeline)>,
) -> Result<(GestureNet<T>, TrainState)> {
    if bytes.len() < 16 {
        return Err(format_err(bytes.len(), "truncated checkpoint preamble"));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(format_err(0, "bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(format_err(4, format!("unsupported checkpoint version {version}")));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| format_err(8, "header length exceeds file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..end]).map_err(|e| format_err(16, format!("bad header: {e}")))?;

    if let Some((cfg, pipeline)) = expected {
        let mut diffs = Vec::new();
        if pipeline != header.pipeline {
            diffs.push("pipeline".to_string());
        }
        let want = serde_json::to_value(cfg).expect("config serializes");
        let have = serde_json::to_value(&header.network).expect("config serializes");
        differing_fields(&have, &want, "network", &mut diffs);
        if !diffs.is_empty() {
            return Err(Error::ConfigMismatch(diffs));
        }
    }

    let mut model = GestureNet::<T>::new(header.network.clone(), header.pipeline)?;
    let mut offset = end;
    let mut values = Vec::with_capacity(header.tensors.len());
    for _ in &header.tensors {
        let (t, used) = serialize::decode_prefix::<T>(&bytes[offset..], offset)?;
        values.push(t);
        offset += used;
    }
    if offset != bytes.len() {
        return Err(format_err(offset, "trailing bytes after last tensor"));
    }
    let store = model.store_mut();
    let expected_entries = store.params().len() * 2 + store.all_stats().len() * 2;
    if header.tensors.len() != expected_entries || header.stats.len() != store.all_stats().len() {
        return Err(format_err(16, "tensor directory does not match the model layout"));
    }
    for (entry, value) in header.tensors.iter().zip(values) {
        let bad = || format_err(16, format!("tensor '{}' ({:?}) does not fit the model", entry.name, entry.kind));
        match entry.kind {
            TensorKind::Value | TensorKind::Momentum => {
                let id = store.id(&entry.name).ok_or_else(bad)?;
                let p = store.get_mut(id);
                if p.value.shape() != value.shape() {
                    return Err(bad());
                }
                if entry.kind == TensorKind::Value {
                    p.value = value;
                } else {
                    p.momentum = value;
                }
            }
            TensorKind::RunningMean | TensorKind::RunningVar => {
                let s = store.all_stats_mut().iter_mut().find(|s| s.name == entry.name).ok_or_else(bad)?;
                if value.numel() != s.mean.len() {
                    return Err(bad());
                }
                if entry.kind == TensorKind::RunningMean {
                    s.mean = value.into_data();
                } else {
                    s.var = value.into_data();
                }
            }
        }
    }
    for (s, e) in store.all_stats_mut().iter_mut().zip(&header.stats) {
        if s.name != e.name {
            return Err(format_err(16, format!("running statistics '{}' out of order", e.name)));
        }
        s.initialized = e.initialized;
    }
    Ok((model, header.state))
}

pub fn load_checkpoint<T: Element>(
    path: &Path,
    expected: Option<(&NetworkConfig, Pipeline)>,
) -> Result<(GestureNet<T>, TrainState)> {
    let bytes = std::fs::read(path).map_err(io_err(format!("reading {}", path.display())))?;
    decode_checkpoint(&bytes, expected)
}
