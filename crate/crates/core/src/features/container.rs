//! Named float32 array container.
//!
//! Layout (all integers `u32` little-endian):
//!
//! ```text
//! magic  b"UAVT"
//! version            1 = 2-D grids, 2 = N-D tensors
//! repeated until EOF:
//!   name_len, name (UTF-8)
//!   v1: rows, cols          v2: ndim, dims[ndim]
//!   data: row-major f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"UAVT";
pub const VERSION_GRID: u32 = 1;
pub const VERSION_TENSOR: u32 = 2;

/// A named array with its shape.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("{name}: shape {shape:?} does not match {} values", data.len())));
        }
        Ok(Self { name, shape, data })
    }
}

fn put(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(version: u32, arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&version.to_le_bytes());
    for a in arrays {
        put(&mut buf, a.name.len())?;
        buf.extend_from_slice(a.name.as_bytes());
        match version {
            VERSION_GRID => {
                if a.shape.len() != 2 {
                    return Err(Error::Format(format!("{}: grid container needs 2-D arrays", a.name)));
                }
                put(&mut buf, a.shape[0])?;
                put(&mut buf, a.shape[1])?;
            }
            VERSION_TENSOR => {
                put(&mut buf, a.shape.len())?;
                for &d in &a.shape {
                    put(&mut buf, d)?;
                }
            }
            v => return Err(Error::Unsupported(format!("container version {v}"))),
        }
        for v in &a.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("truncated container at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Returns `(version, arrays)`.
pub fn decode(bytes: &[u8]) -> Result<(u32, Vec<NamedArray>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = c.u32()? as u32;
    if version != VERSION_GRID && version != VERSION_TENSOR {
        return Err(Error::Unsupported(format!("container version {version}")));
    }
    let mut arrays = Vec::new();
    while c.pos < bytes.len() {
        let len = c.u32()?;
        let name = String::from_utf8(c.take(len)?.to_vec())
            .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
        let shape = if version == VERSION_GRID {
            vec![c.u32()?, c.u32()?]
        } else {
            let nd = c.u32()?;
            (0..nd).map(|_| c.u32()).collect::<Result<_>>()?
        };
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Format("array too large".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        arrays.push(NamedArray { name, shape, data });
    }
    Ok((version, arrays))
}

pub fn write(path: impl AsRef<Path>, version: u32, arrays: &[NamedArray]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(version, arrays)?).map_err(|e| Error::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<(u32, Vec<NamedArray>)> {
    let path = path.as_ref();
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
