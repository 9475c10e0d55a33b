//! Binary checkpoint format.
//!
//! ```text
//! "GDN1"
//! u8   precision flag (1 = f32, 2 = f64)
//! u16  architecture id length, then UTF-8 bytes
//! u8   input rank, then u32 per extent
//! u32  class count
//! u32  parameter count, then per parameter:
//!        u16 name length, UTF-8 name, u8 rank, u32 per extent
//! raw little-endian parameter values, in manifest order
//! ```
//! All integers are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::engine::network::check_manifest;
use crate::engine::{Model, Precision, Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GDN1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub precision: Precision,
    pub architecture: String,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub manifest: Vec<(String, Vec<usize>)>,
}

/// Decoded checkpoint: header plus values kept as raw bytes so that either
/// precision can be read without conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    payload: Vec<u8>,
}

fn put_u16(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u16::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} too long")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_u32(out: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} too large")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_shape(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    let rank = u8::try_from(shape.len()).map_err(|_| Error::Checkpoint("rank too large".into()))?;
    out.push(rank);
    for &e in shape {
        put_u32(out, e, "extent")?;
    }
    Ok(())
}

/// Serialise any model's parameters.
pub fn to_bytes<T: Real, M: Model<T> + ?Sized>(model: &M) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(T::PRECISION.flag());
    let arch = model.architecture();
    put_u16(&mut out, arch.len(), "architecture id")?;
    out.extend_from_slice(arch.as_bytes());
    put_shape(&mut out, model.input_shape())?;
    put_u32(&mut out, model.classes(), "class count")?;
    let manifest = model.manifest();
    put_u32(&mut out, manifest.len(), "parameter count")?;
    for (name, shape) in &manifest {
        put_u16(&mut out, name.len(), "parameter name")?;
        out.extend_from_slice(name.as_bytes());
        put_shape(&mut out, shape)?;
    }
    for t in model.param_tensors() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

pub fn save<T: Real, M: Model<T> + ?Sized>(model: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model)?;
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// SHA-256 of the serialised checkpoint, hex encoded.
pub fn digest<T: Real, M: Model<T> + ?Sized>(model: &M) -> Result<String> {
    Ok(hex::encode(Sha256::digest(to_bytes(model)?)))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<usize> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]) as usize)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()?;
        let at = self.pos;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 at byte {at}")))
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        let rank = self.u8()? as usize;
        (0..rank).map(|_| self.u32()).collect()
    }
}

impl Checkpoint {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, expected GDN1".into()));
        }
        let flag = c.u8()?;
        let precision = Precision::from_flag(flag)
            .ok_or_else(|| Error::Checkpoint(format!("unknown precision flag {flag}")))?;
        let architecture = c.string()?;
        let input_shape = c.shape()?;
        let classes = c.u32()?;
        let count = c.u32()?;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let name = c.string()?;
            let shape = c.shape()?;
            manifest.push((name, shape));
        }
        let values: usize = manifest.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        let width = match precision {
            Precision::F32 => 4,
            Precision::F64 => 8,
        };
        let payload = c.take(values * width)?.to_vec();
        if c.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameter payload",
                bytes.len() - c.pos
            )));
        }
        Ok(Checkpoint {
            header: CheckpointHeader {
                precision,
                architecture,
                input_shape,
                classes,
                manifest,
            },
            payload,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Parameter tensors in manifest order.
    pub fn tensors<T: Real>(&self) -> Result<Vec<Tensor<T>>> {
        if self.header.precision != T::PRECISION {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {:?} values, requested {:?}",
                self.header.precision,
                T::PRECISION
            )));
        }
        let mut pos = 0;
        let mut out = Vec::with_capacity(self.header.manifest.len());
        for (_, shape) in &self.header.manifest {
            let n: usize = shape.iter().product();
            let data = (0..n)
                .map(|i| T::read_le(&self.payload[pos + i * T::BYTES..]))
                .collect();
            pos += n * T::BYTES;
            out.push(Tensor::new(shape.clone(), data)?);
        }
        Ok(out)
    }

    /// Copy values into `model`, which must have the same architecture id and manifest.
    pub fn load_into<T: Real, M: Model<T> + ?Sized>(&self, model: &mut M) -> Result<()> {
        if model.architecture() != self.header.architecture {
            return Err(Error::Checkpoint(format!(
                "architecture `{}` does not match checkpoint `{}`",
                model.architecture(),
                self.header.architecture
            )));
        }
        check_manifest(&model.manifest(), &self.header.manifest)?;
        let tensors = self.tensors::<T>()?;
        for (dst, src) in model.param_tensors_mut().into_iter().zip(tensors) {
            *dst = src;
        }
        Ok(())
    }
}
