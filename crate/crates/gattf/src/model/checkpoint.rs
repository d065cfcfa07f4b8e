//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "GTCK"
//! version    u16      currently 1
//! meta_len   u32      length of the JSON metadata block
//! meta       meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! count      u32      number of tensors
//! per tensor:
//!   name_len u16, name bytes (UTF-8)
//!   dtype    u8       1 = f64
//!   rows     u32
//!   cols     u32
//!   payload  rows·cols little-endian f64
//! crc        u32      CRC-32 (IEEE) of every preceding byte
//! ```
//!
//! Writes go to a sibling temp file and are renamed into place, so a
//! half-written checkpoint never shadows a good one.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::featurize::FeatureConfig;
use crate::model::{ModelConfig, ModelParams};
use crate::timeseries::SensorId;

const MAGIC: &[u8; 4] = b"GTCK";
const VERSION: u16 = 1;
const DTYPE_F64: u8 = 1;

/// Everything needed to rebuild instances and run the network at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub features: FeatureConfig,
    /// Dataset sensor order backing the static-id mapping.
    pub dataset_ids: Vec<SensorId>,
    pub train_seed: u64,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    meta: &CheckpointMeta,
    params: &ModelParams,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta_json = serde_json::to_vec(meta)
        .map_err(|e| Error::Checkpoint { path: path.into(), msg: e.to_string() })?;
    buf.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta_json);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.names().iter().zip(params.tensors()) {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(DTYPE_F64);
        buf.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());

    let tmp = path.with_extension("tmp");
    {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(&buf)?;
        file.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(CheckpointMeta, ModelParams)> {
    let path = path.as_ref();
    let fail = |msg: String| Error::Checkpoint { path: path.into(), msg };
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 14 {
        return Err(fail("file too short".into()));
    }
    let (body, crc_bytes) = buf.split_at(buf.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(fail(format!("CRC mismatch: stored {stored:08x}, computed {computed:08x}")));
    }

    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > body.len() {
            return Err(Error::Checkpoint { path: path.into(), msg: "truncated".into() });
        }
        let slice = &body[cursor..cursor + n];
        cursor += n;
        Ok(slice)
    };

    if take(4)? != MAGIC {
        return Err(fail("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(fail(format!("unsupported version {version}")));
    }
    let meta_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let meta: CheckpointMeta = serde_json::from_slice(take(meta_len)?)
        .map_err(|e| Error::Checkpoint { path: path.into(), msg: format!("metadata: {e}") })?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|e| Error::Checkpoint { path: path.into(), msg: e.to_string() })?;
        let dtype = take(1)?[0];
        if dtype != DTYPE_F64 {
            return Err(fail(format!("unknown dtype {dtype}")));
        }
        let rows = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let payload = take(rows * cols * 8)?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        named.push((name, Tensor::new(rows, cols, data)?));
    }
    if cursor != body.len() {
        return Err(fail("trailing bytes".into()));
    }
    Ok((meta, ModelParams::from_named(named)))
}
