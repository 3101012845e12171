//! Checkpoint file: magic `TJF1`, a length-prefixed key=value header with
//! the model config, then per-parameter records of name, shape and raw
//! little-endian f32 data. Round trips are bit exact.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::model::{Forecaster, ModelConfig};
use crate::nn::{ParameterStore, TensorValue};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TJF1";

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint io: {0}")]
    Io(String),
}

fn corrupt(msg: impl Into<String>) -> CheckpointError {
    CheckpointError::Corrupt(msg.into())
}

fn header_text(cfg: &ModelConfig) -> String {
    format!(
        "d_model={}\nn_heads={}\nn_encoder_layers={}\nnum_anchors={}\nnum_modes={}\n\
         future_len={}\nhistory_len={}\nwaypoint_stride={}\n",
        cfg.d_model,
        cfg.n_heads,
        cfg.n_encoder_layers,
        cfg.num_anchors,
        cfg.num_modes,
        cfg.future_len,
        cfg.history_len,
        cfg.waypoint_stride
    )
}

fn parse_header(text: &str) -> Result<ModelConfig, CheckpointError> {
    let mut cfg = ModelConfig::default();
    let mut seen = std::collections::HashSet::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| corrupt(format!("header line `{line}` is not key=value")))?;
        let value: usize = value
            .parse()
            .map_err(|_| corrupt(format!("header field `{key}` has non-count value `{value}`")))?;
        match key {
            "d_model" => cfg.d_model = value,
            "n_heads" => cfg.n_heads = value,
            "n_encoder_layers" => cfg.n_encoder_layers = value,
            "num_anchors" => cfg.num_anchors = value,
            "num_modes" => cfg.num_modes = value,
            "future_len" => cfg.future_len = value,
            "history_len" => cfg.history_len = value,
            "waypoint_stride" => cfg.waypoint_stride = value,
            other => return Err(corrupt(format!("unknown header field `{other}`"))),
        }
        seen.insert(key.to_string());
    }
    if seen.len() != 8 {
        return Err(corrupt(format!("header carries {} of 8 required fields", seen.len())));
    }
    Ok(cfg)
}

pub fn serialize_checkpoint(store: &ParameterStore, cfg: &ModelConfig) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    let header = header_text(cfg);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for slot in store.iter() {
        out.extend_from_slice(&(slot.name.len() as u32).to_le_bytes());
        out.extend_from_slice(slot.name.as_bytes());
        let shape = slot.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in slot.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(
    store: &ParameterStore,
    cfg: &ModelConfig,
    path: &Path,
) -> Result<(), CheckpointError> {
    let bytes = serialize_checkpoint(store, cfg);
    let mut file =
        std::fs::File::create(path).map_err(|e| CheckpointError::Io(e.to_string()))?;
    file.write_all(&bytes).map_err(|e| CheckpointError::Io(e.to_string()))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(corrupt(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn exhausted(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn deserialize_checkpoint(
    bytes: &[u8],
) -> Result<(ParameterStore, ModelConfig), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(corrupt(format!("bad magic {magic:?}")));
    }
    let header_len = r.u32("header length")? as usize;
    let header = std::str::from_utf8(r.take(header_len, "header")?)
        .map_err(|_| corrupt("header is not UTF-8"))?;
    let cfg = parse_header(header)?;
    cfg.validate().map_err(|e| corrupt(format!("header config invalid: {e}")))?;

    let mut store = ParameterStore::new();
    while !r.exhausted() {
        let name_len = r.u32("parameter name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "parameter name")?)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32(&format!("rank of `{name}`"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("shape of `{name}`"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(4 * numel, &format!("data of `{name}`"))?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let value = TensorValue::new(shape, data)
            .map_err(|e| corrupt(format!("parameter `{name}`: {e}")))?;
        store
            .insert_value(&name, value)
            .map_err(|e| corrupt(format!("parameter `{name}`: {e}")))?;
    }

    // cross-check the parameter layout against what the header's model
    // would create
    let mut expected_store = ParameterStore::new();
    let _ = Forecaster::init(cfg, &mut expected_store, 0)
        .map_err(|e| corrupt(format!("header config rejected: {e}")))?;
    if expected_store.len() != store.len() {
        return Err(corrupt(format!(
            "{} parameters in file, model wants {}",
            store.len(),
            expected_store.len()
        )));
    }
    for slot in expected_store.iter() {
        let loaded = store
            .value(&slot.name)
            .map_err(|_| corrupt(format!("missing parameter `{}`", slot.name)))?;
        if loaded.shape() != slot.value.shape() {
            return Err(corrupt(format!(
                "parameter `{}` has shape {:?}, model wants {:?}",
                slot.name,
                loaded.shape(),
                slot.value.shape()
            )));
        }
    }
    Ok((store, cfg))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterStore, ModelConfig), CheckpointError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CheckpointError::Io(e.to_string()))?
        .read_to_end(&mut bytes)
        .map_err(|e| CheckpointError::Io(e.to_string()))?;
    deserialize_checkpoint(&bytes)
}
