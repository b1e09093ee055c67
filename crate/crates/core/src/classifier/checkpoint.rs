use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, NetworkConfig, ParamEntry, TrainingMeta};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CSMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    meta: TrainingMeta,
    params: Vec<ParamEntry>,
}

/// Layout: magic, u32 version, u64 header length, JSON header, then every
/// parameter as little-endian f64 in layout order.
pub fn write_model<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        meta: model.meta().clone(),
        params: model.layout().entries().to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(20 + json.len() + model.params().len() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
}

pub fn read_model<R: Read>(mut input: R) -> Result<Model> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
    decode(&bytes)
}

fn fmt_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        format: "checkpoint",
        offset: offset as u64,
        message: message.into(),
    }
}

fn decode(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fmt_err(0, "bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fmt_err(8, format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20usize
        .checked_add(hlen)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| fmt_err(12, "header length past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[20..body]).map_err(|e| fmt_err(20, e.to_string()))?;
    let model_shape = super::Layout::new(&header.config)?;
    let key = |e: &ParamEntry| (e.name.clone(), e.shape.clone(), e.offset, e.len);
    if !model_shape.entries().iter().map(key).eq(header.params.iter().map(key)) {
        return Err(fmt_err(20, "parameter table does not match config"));
    }
    let payload = &bytes[body..];
    if payload.len() != model_shape.param_count() * 8 {
        return Err(fmt_err(
            body,
            format!("expected {} parameters, found {} bytes", model_shape.param_count(), payload.len()),
        ));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Model::from_parts(&header.config, params, header.meta)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_model(model, std::io::BufWriter::new(file))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
