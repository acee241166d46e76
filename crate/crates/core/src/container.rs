//! Binary tensor container ("ADRS").
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   b"ADRS"
//! version u32           1 = single anonymous tensor, 2 = named collection
//!
//! v1 body: tensor record
//! v2 body: u32 entry count, then per entry
//!          u32 name length, UTF-8 name bytes, tensor record
//!
//! tensor record: u32 rank, u32 dims[rank], f32 payload (row-major)
//! ```
//!
//! Values are computed in f64 throughout the crate but stored as f32; the
//! round-trip therefore quantizes to single precision by design.

use ndarray::{ArrayD, IxDyn};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"ADRS";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic bytes (expected \"ADRS\")")]
    BadMagic,
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("tensor record is malformed: {0}")]
    Malformed(String),
    #[error("entry name is not valid UTF-8")]
    BadName,
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), ContainerError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, ContainerError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_record<W: Write>(w: &mut W, tensor: &ArrayD<f64>) -> Result<(), ContainerError> {
    write_u32(w, tensor.ndim() as u32)?;
    for &d in tensor.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in tensor.as_standard_layout().iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_record<R: Read>(r: &mut R) -> Result<ArrayD<f64>, ContainerError> {
    let rank = read_u32(r)? as usize;
    if rank > 32 {
        return Err(ContainerError::Malformed(format!("rank {rank} too large")));
    }
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(read_u32(r)? as usize);
    }
    let len: usize = dims.iter().product();
    let mut data = Vec::with_capacity(len);
    let mut buf = [0u8; 4];
    for _ in 0..len {
        r.read_exact(&mut buf)
            .map_err(|_| ContainerError::Malformed("truncated payload".into()))?;
        data.push(f32::from_le_bytes(buf) as f64);
    }
    ArrayD::from_shape_vec(IxDyn(&dims), data)
        .map_err(|e| ContainerError::Malformed(e.to_string()))
}

/// Writes a single anonymous tensor (format version 1).
pub fn write_tensor(path: &Path, tensor: &ArrayD<f64>) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, 1)?;
    write_record(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

/// Writes a named tensor collection (format version 2). Entry order is preserved.
pub fn write_named(path: &Path, entries: &[(String, ArrayD<f64>)]) -> Result<(), ContainerError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, 2)?;
    write_u32(&mut w, entries.len() as u32)?;
    for (name, tensor) in entries {
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        write_record(&mut w, tensor)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads either format; v1 files come back as one entry with an empty name.
pub fn read_any(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>, ContainerError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    match read_u32(&mut r)? {
        1 => Ok(vec![(String::new(), read_record(&mut r)?)]),
        2 => {
            let count = read_u32(&mut r)? as usize;
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let name_len = read_u32(&mut r)? as usize;
                let mut name = vec![0u8; name_len];
                r.read_exact(&mut name)
                    .map_err(|_| ContainerError::Malformed("truncated name".into()))?;
                let name = String::from_utf8(name).map_err(|_| ContainerError::BadName)?;
                out.push((name, read_record(&mut r)?));
            }
            Ok(out)
        }
        v => Err(ContainerError::BadVersion(v)),
    }
}

/// Reads a version-1 file as a single tensor.
pub fn read_tensor(path: &Path) -> Result<ArrayD<f64>, ContainerError> {
    let entries = read_any(path)?;
    match entries.len() {
        1 => Ok(entries.into_iter().next().unwrap().1),
        n => Err(ContainerError::Malformed(format!(
            "expected a single tensor, found {n} entries"
        ))),
    }
}
