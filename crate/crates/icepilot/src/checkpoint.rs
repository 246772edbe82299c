//! Model checkpoints.
//!
//! Layout (all integers little-endian): magic `ICECKPT1`, `u32` format
//! version, `u32` length + UTF-8 JSON header (model config and free-form
//! metadata), `u32` blob count, then per blob: `u16` name length + name,
//! `u32` rank + `u32` dims, `f32` values. A SHA-256 of everything before it
//! closes the file.

use std::collections::HashMap;
use std::path::Path;

use icepilot_core::nn::{ModelConfig, PoseRegressor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::Error;

pub const MAGIC: &[u8; 8] = b"ICECKPT1";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub fn encode(model: &PoseRegressor, metadata: serde_json::Value) -> Vec<u8> {
    let header = CheckpointHeader {
        model: model.config.clone(),
        metadata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for d in &p.shape {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for v in &p.value {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .at
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or("truncated checkpoint")?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(
            self.take(2)?.try_into().expect("2 bytes"),
        ))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(PoseRegressor, CheckpointHeader), String> {
    if bytes.len() < 8 + 32 || &bytes[..8] != MAGIC {
        return Err("not a checkpoint (bad magic)".into());
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err("checksum mismatch".into());
    }
    let mut r = Reader { bytes: body, at: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let n = r.u32()? as usize;
    let header: CheckpointHeader =
        serde_json::from_slice(r.take(n)?).map_err(|e| format!("header: {e}"))?;
    let count = r.u32()? as usize;
    let mut blobs: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| "non-UTF-8 parameter name")?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let values = r
            .take(numel * 4)?
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        blobs.insert(name, (shape, values));
    }
    if r.at != body.len() {
        return Err("trailing bytes after parameter blobs".into());
    }
    let mut model = PoseRegressor::new(header.model.clone()).map_err(|e| e.to_string())?;
    for p in model.params() {
        match blobs.get(&p.name) {
            Some((shape, _)) if *shape != p.shape => {
                return Err(format!(
                    "parameter `{}` has shape {shape:?}, expected {:?}",
                    p.name, p.shape
                ))
            }
            _ => {}
        }
    }
    if blobs.len() != model.params().len() {
        return Err(format!(
            "checkpoint holds {} parameters, model expects {}",
            blobs.len(),
            model.params().len()
        ));
    }
    model
        .load_parameters(|name| blobs.get(name).map(|(_, v)| v.as_slice()))
        .map_err(|e| e.to_string())?;
    Ok((model, header))
}

pub fn save(path: &Path, model: &PoseRegressor, metadata: serde_json::Value) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(model, metadata)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(PoseRegressor, CheckpointHeader), Error> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|r| Error::format(path, r))
}
