//! FGT1: a minimal little-endian tensor container.
//!
//! Layout: the magic `FGT1`, a `u32` rank, `rank` `u32` dimensions, then
//! the `f32` values in row-major order. Several records may follow each
//! other in one file.

use std::path::Path;

use bistream_core::Tensor;

use crate::error::{StoreError, StoreResult};
use crate::fsutil;

pub const MAGIC: &[u8; 4] = b"FGT1";
/// Ranks above this are rejected as corrupt.
const MAX_RANK: usize = 8;

/// Panics if a dimension exceeds `u32::MAX`.
pub fn encode_into(t: &Tensor<f32>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&u32::try_from(d).expect("dimension fits u32").to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * t.rank() + 4 * t.len());
    encode_into(t, &mut out);
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if bytes.len() < n {
        return None;
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Some(head)
}

/// Decode one record from the front of `bytes`, advancing it.
pub fn decode_next(bytes: &mut &[u8]) -> Result<Tensor<f32>, String> {
    let magic = take(bytes, 4).ok_or("truncated header")?;
    if magic != MAGIC {
        return Err("bad magic (not an FGT1 record)".into());
    }
    let rank = u32::from_le_bytes(take(bytes, 4).ok_or("truncated rank")?.try_into().unwrap()) as usize;
    if rank > MAX_RANK {
        return Err(format!("rank {rank} exceeds {MAX_RANK}"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u32::from_le_bytes(take(bytes, 4).ok_or("truncated shape")?.try_into().unwrap());
        shape.push(d as usize);
    }
    let len = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or("element count overflows")?;
    let raw = take(bytes, len.checked_mul(4).ok_or("byte count overflows")?).ok_or("truncated data")?;
    let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Tensor::new(&shape, data).map_err(|e| e.to_string())
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>, String> {
    let mut rest = bytes;
    let t = decode_next(&mut rest)?;
    if !rest.is_empty() {
        return Err(format!("{} trailing bytes", rest.len()));
    }
    Ok(t)
}

pub fn decode_all(bytes: &[u8]) -> Result<Vec<Tensor<f32>>, String> {
    let mut rest = bytes;
    let mut out = Vec::new();
    while !rest.is_empty() {
        out.push(decode_next(&mut rest)?);
    }
    Ok(out)
}

pub fn write(path: &Path, t: &Tensor<f32>) -> StoreResult<()> {
    fsutil::write_atomic(path, &encode(t))
}

pub fn read(path: &Path) -> StoreResult<Tensor<f32>> {
    decode(&fsutil::read(path)?).map_err(|m| StoreError::format(path, m))
}

pub fn write_all(path: &Path, ts: &[&Tensor<f32>]) -> StoreResult<()> {
    let mut out = Vec::new();
    for t in ts {
        encode_into(t, &mut out);
    }
    fsutil::write_atomic(path, &out)
}

pub fn read_all(path: &Path) -> StoreResult<Vec<Tensor<f32>>> {
    decode_all(&fsutil::read(path)?).map_err(|m| StoreError::format(path, m))
}
