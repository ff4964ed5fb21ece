//! `CMT1` tensor files: 4-byte magic, little-endian u32 rank, u32 extents,
//! then little-endian f32 row-major payload. NaN marks a missing value.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CMT1";

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(8 + 4 * t.shape().len() + 4 * t.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &e in t.shape() {
        buf.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor<f32>> {
    let bad = |reason: String| Error::TensorFormat { path: path.to_path_buf(), reason };
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing CMT1 magic".into()));
    }
    let word = |at: usize| -> Option<u32> {
        bytes.get(at..at + 4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    };
    let ndim = word(4).unwrap() as usize;
    if ndim == 0 || ndim > 8 {
        return Err(bad(format!("rank {ndim} out of range")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let e = word(8 + 4 * i).ok_or_else(|| bad("truncated header".into()))?;
        shape.push(e as usize);
    }
    let count: usize = shape.iter().product();
    let start = 8 + 4 * ndim;
    let payload = &bytes[start..];
    if payload.len() != 4 * count {
        return Err(bad(format!(
            "shape {:?} needs {} payload bytes, found {}",
            shape,
            4 * count,
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Tensor::new(shape, data)
}

pub fn read_tensor(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode(t)).map_err(|e| Error::io(path, e))
}
