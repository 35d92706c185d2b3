//! Head checkpoint file.
//!
//! Layout:
//!
//! ```text
//! 4 bytes   magic "HCK1"
//! 4 bytes   u32 LE length N of the JSON header
//! N bytes   UTF-8 JSON header (dims, hyper, step, tensor table)
//! ...       tensors as raw little-endian f32, in header order:
//!           w1 (D x H, row-major), b1 (H), attn_v (H), w2 (H x H, row-major),
//!           b2 (H), w_out (H), b_out (1)
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HeadError, HeadHyper, HeadParams};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HCK1";
const FORMAT: &str = "speechbench-head";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub d: usize,
    pub h: usize,
    pub hyper: HeadHyper,
    pub step: u64,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: HeadParams,
    pub hyper: HeadHyper,
    pub step: u64,
}

fn tensor_table(d: usize, h: usize) -> Vec<TensorEntry> {
    let e = |name: &str, shape: &[usize]| TensorEntry { name: name.into(), shape: shape.to_vec() };
    vec![
        e("w1", &[d, h]),
        e("b1", &[h]),
        e("attn_v", &[h]),
        e("w2", &[h, h]),
        e("b2", &[h]),
        e("w_out", &[h]),
        e("b_out", &[1]),
    ]
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let (d, h) = ckpt.params.dims();
    let header = CheckpointHeader {
        format: FORMAT.into(),
        version: 1,
        d,
        h,
        hyper: ckpt.hyper,
        step: ckpt.step,
        tensors: tensor_table(d, h),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * ckpt.params.num_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for tensor in ckpt.params.tensors() {
        for &v in tensor {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, HeadError> {
    let bad = |m: &str| HeadError::Checkpoint(m.to_string());
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(bad("missing HCK1 magic"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let json = bytes.get(8..8 + n).ok_or_else(|| bad("truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json).map_err(|e| bad(&format!("header: {e}")))?;
    if header.format != FORMAT || header.version != 1 {
        return Err(bad("unknown format or version"));
    }
    if header.tensors != tensor_table(header.d, header.h) {
        return Err(bad("tensor table does not match dims"));
    }
    let mut params = HeadParams::zeros(header.d, header.h);
    let expected = 4 * params.num_params();
    let payload = &bytes[8 + n..];
    if payload.len() != expected {
        return Err(bad(&format!("payload has {} bytes, expected {expected}", payload.len())));
    }
    let mut values = payload.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))));
    for tensor in params.tensors_mut() {
        for slot in tensor.iter_mut() {
            *slot = values.next().expect("length checked");
        }
    }
    Ok(Checkpoint { params, hyper: header.hyper, step: header.step })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), HeadError> {
    fs::write(path, encode_checkpoint(ckpt))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, HeadError> {
    decode_checkpoint(&fs::read(path)?)
}
