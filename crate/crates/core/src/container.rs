//! Binary tensor container shared by checkpoints and datasets.
//!
//! Layout: `b"TPNT"`, version `u32`, tensor count `u32`, then per tensor a
//! `u16` name length and UTF-8 name, a `u8` rank, `u32` dims and the `f32`
//! payload. All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TPNT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "tensor {name}: dims {dims:?} do not match {} values",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Checkpoint(format!("tensor name too long: {}", t.name)))?;
        let rank = u8::try_from(t.dims.len())
            .map_err(|_| Error::Checkpoint(format!("tensor {} has too many dims", t.name)))?;
        if t.dims.iter().product::<usize>() != t.data.len() {
            return Err(Error::Checkpoint(format!("tensor {} has inconsistent dims", t.name)));
        }
        w.write_all(&name_len.to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&[rank])?;
        for &d in &t.dims {
            let d = u32::try_from(d).map_err(|_| Error::Checkpoint(format!("dim {d} too large")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
    Ok(buf)
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    if &read_array::<4, _>(&mut r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a TPNT container".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_array(&mut r)?) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_array::<1, _>(&mut r)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(u32::from_le_bytes(read_array(&mut r)?) as usize);
        }
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated payload for {name}: {e}")))?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedTensor { name, dims, data });
    }
    Ok(out)
}

pub fn save(path: impl AsRef<Path>, tensors: &[NamedTensor]) -> Result<()> {
    write_tensors(BufWriter::new(File::create(path)?), tensors)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<NamedTensor>> {
    read_tensors(BufReader::new(File::open(path)?))
}
