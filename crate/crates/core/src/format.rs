//! Little-endian binary containers for tensors (`TVT1`) and checkpoints (`TVM1`).
//!
//! ```text
//! TVT1: magic "TVT1" | dtype u8 (1 = f32) | ndim u8 | ndim × u32 extents | f32 payload
//! TVM1: magic "TVM1" | u32 count | count × { u16 name_len | name | u8 ndim | ndim × u32 | f32 payload }
//! ```

use std::fs;
use std::path::Path;

use crate::engine::{ParamStore, Tensor};
use crate::error::{Error, FormatError, Result};

pub const TENSOR_MAGIC: [u8; 4] = *b"TVT1";
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"TVM1";
pub const DTYPE_F32: u8 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(FormatError::Truncated {
                what,
                needed: n,
                available,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, FormatError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn magic(&mut self, expected: [u8; 4]) -> Result<(), FormatError> {
        let available = self.buf.len() - self.pos;
        if available < 4 {
            return Err(FormatError::BadMagic {
                expected,
                found: self.buf[self.pos..].to_vec(),
            });
        }
        let found = self.take(4, "magic")?;
        if found != expected {
            return Err(FormatError::BadMagic {
                expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    fn extents(&mut self, ndim: usize) -> Result<Vec<usize>, FormatError> {
        if ndim == 0 {
            return Err(FormatError::InvalidHeader("zero-dimensional tensor".into()));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = self.u32("extents")? as usize;
            if d == 0 {
                return Err(FormatError::InvalidHeader("zero extent".into()));
            }
            shape.push(d);
        }
        Ok(shape)
    }

    fn payload(&mut self, shape: &[usize]) -> Result<Vec<f32>, FormatError> {
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| FormatError::InvalidHeader("extent product overflows".into()))?;
        let bytes = self.take(n, "payload")?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<(), FormatError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(FormatError::TrailingBytes(n)),
        }
    }
}

fn put_extents(out: &mut Vec<u8>, shape: &[usize]) -> Result<()> {
    for &d in shape {
        let d = u32::try_from(d).map_err(|_| Error::shape(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    Ok(())
}

fn put_payload(out: &mut Vec<u8>, data: &[f32]) {
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_tensor(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let ndim = u8::try_from(t.ndim()).map_err(|_| Error::shape("too many dimensions"))?;
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + 4 * t.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.push(DTYPE_F32);
    out.push(ndim);
    put_extents(&mut out, t.shape())?;
    put_payload(&mut out, t.data());
    Ok(out)
}

pub fn decode_tensor(buf: &[u8]) -> Result<Tensor<f32>, FormatError> {
    let mut r = Reader::new(buf);
    r.magic(TENSOR_MAGIC)?;
    let dtype = r.u8("dtype")?;
    if dtype != DTYPE_F32 {
        return Err(FormatError::UnsupportedDtype(dtype));
    }
    let ndim = r.u8("ndim")? as usize;
    let shape = r.extents(ndim)?;
    let data = r.payload(&shape)?;
    r.finish()?;
    Tensor::from_vec(&shape, data).map_err(|e| FormatError::InvalidHeader(e.to_string()))
}

pub fn encode_checkpoint(params: &ParamStore<f32>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    let count = u32::try_from(params.len()).map_err(|_| Error::shape("too many parameters"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::shape("parameter name too long"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let ndim = u8::try_from(p.value.ndim()).map_err(|_| Error::shape("too many dimensions"))?;
        out.push(ndim);
        put_extents(&mut out, p.value.shape())?;
        put_payload(&mut out, p.value.data());
    }
    Ok(out)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<ParamStore<f32>, FormatError> {
    let mut r = Reader::new(buf);
    r.magic(CHECKPOINT_MAGIC)?;
    let count = r.u32("parameter count")? as usize;
    let mut values = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| FormatError::InvalidHeader("parameter name is not UTF-8".into()))?
            .to_owned();
        let ndim = r.u8("ndim")? as usize;
        let shape = r.extents(ndim)?;
        let data = r.payload(&shape)?;
        let t = Tensor::from_vec(&shape, data).map_err(|e| FormatError::InvalidHeader(e.to_string()))?;
        values.push((name, t));
    }
    r.finish()?;
    Ok(ParamStore::from_named_values(values))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_tensor(path: &Path, t: &Tensor<f32>) -> Result<()> {
    write_file(path, &encode_tensor(t)?)
}

pub fn load_tensor(path: &Path) -> Result<Tensor<f32>> {
    decode_tensor(&read_file(path)?).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub fn save_checkpoint(path: &Path, params: &ParamStore<f32>) -> Result<()> {
    write_file(path, &encode_checkpoint(params)?)
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore<f32>> {
    decode_checkpoint(&read_file(path)?).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
