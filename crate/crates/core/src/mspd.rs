//! `MSPD` tensor files: magic `MSPD`, u32 version, u32 rank, rank × u32
//! extents, then the f32 payload. All integers and floats little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"MSPD";
pub const VERSION: u32 = 1;

pub fn encode(tensor: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * tensor.rank() + 4 * tensor.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
    for &extent in tensor.shape() {
        out.extend_from_slice(&(extent as u32).to_le_bytes());
    }
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Tensor<f32>, String> {
    let mut words = bytes.get(4..).ok_or("truncated header")?.chunks_exact(4);
    if &bytes[..4] != MAGIC {
        return Err("bad magic".into());
    }
    let mut next_u32 = || {
        words
            .next()
            .map(|w| u32::from_le_bytes(w.try_into().unwrap()))
            .ok_or_else(|| "truncated header".to_string())
    };
    let version = next_u32()?;
    if version != VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rank = next_u32()? as usize;
    let shape = (0..rank)
        .map(|_| next_u32().map(|e| e as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let offset = 12 + 4 * rank;
    let numel: usize = shape.iter().product();
    let payload = &bytes[offset.min(bytes.len())..];
    if payload.len() != 4 * numel {
        return Err(format!(
            "payload has {} bytes, shape {shape:?} needs {}",
            payload.len(),
            4 * numel
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|w| f32::from_le_bytes(w.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn write(path: &Path, tensor: &Tensor<f32>) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(tensor))
        .map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::Format {
        path: path.to_path_buf(),
        reason,
    })
}
