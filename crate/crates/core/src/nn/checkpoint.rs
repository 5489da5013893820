//! Binary parameter checkpoints.
//!
//! Layout (little endian): magic `LGCK`, `u32` version, `u32` metadata length,
//! metadata bytes (UTF-8 JSON), `u32` parameter count, then per parameter
//! `u32` name length, name, `u32` rank, `u64` dims, `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{ParameterSet, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ParameterSet, metadata: &str) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(metadata.len() as u32).to_le_bytes())?;
    w.write_all(metadata.as_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params.iter() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for &d in p.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated string: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
}

/// Parse a checkpoint into parameters (zeroed gradients) and its metadata.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParameterSet, String)> {
    let trunc = |e: std::io::Error| Error::Checkpoint(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(trunc)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r).map_err(trunc)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let meta_len = read_u32(&mut r).map_err(trunc)? as usize;
    let metadata = read_string(&mut r, meta_len)?;
    let count = read_u32(&mut r).map_err(trunc)?;
    let mut params = ParameterSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r).map_err(trunc)? as usize;
        let name = read_string(&mut r, name_len)?;
        let rank = read_u32(&mut r).map_err(trunc)? as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {rank} for `{name}`")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(trunc)? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut b = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b).map_err(trunc)?;
            data.push(f64::from_le_bytes(b));
        }
        params.add(name, Tensor::new(shape, data)?);
    }
    Ok((params, metadata))
}

pub fn save_checkpoint(path: &Path, params: &ParameterSet, metadata: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(std::io::BufWriter::new(file), params, metadata).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ParameterSet, String)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}

/// Copy checkpoint values into `target`, requiring identical names and shapes.
pub fn restore_into(target: &mut ParameterSet, loaded: &ParameterSet) -> Result<()> {
    target
        .check_compatible(loaded)
        .map_err(|e| Error::Checkpoint(format!("checkpoint does not match network: {e}")))?;
    for (dst, src) in target.iter_mut().zip(loaded.iter()) {
        if dst.name != src.name {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` found where `{}` was expected",
                src.name, dst.name
            )));
        }
        dst.value = src.value.clone();
    }
    Ok(())
}
