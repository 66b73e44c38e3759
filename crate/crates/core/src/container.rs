//! Binary formats: the weight container and the raw tensor file.
//!
//! Weight container, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "EMOWGHT\0"
//! version  u8       1
//! width    u8       4 (f32) or 8 (f64)
//! records until end of file:
//!   name_len u32, name (UTF-8), rank u8, dims u32 * rank, scalars
//! ```
//!
//! Raw tensor file: magic `"EMOTNSR\0"`, width byte, `n c h w` as u32, then
//! the NCHW scalars.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Param, Precision, Scalar, Shape, Tensor};

pub const WEIGHT_MAGIC: &[u8; 8] = b"EMOWGHT\0";
pub const TENSOR_MAGIC: &[u8; 8] = b"EMOTNSR\0";
pub const WEIGHT_VERSION: u8 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn scalars<T: Scalar>(&mut self, count: usize, what: &str) -> Result<Vec<T>> {
        let width = T::PRECISION.byte_width();
        let len = count.checked_mul(width).ok_or_else(|| Error::Format(format!("{what} too large")))?;
        Ok(self.take(len, what)?.chunks_exact(width).map(T::read_le).collect())
    }
}

fn header(r: &mut Reader, magic: &[u8; 8], what: &str) -> Result<Precision> {
    if r.take(8, "magic")? != magic {
        return Err(Error::Format(format!("not a {what} (bad magic)")));
    }
    if magic == WEIGHT_MAGIC {
        let v = r.u8("version")?;
        if v != WEIGHT_VERSION {
            return Err(Error::Format(format!("unsupported container version {v}")));
        }
    }
    let w = r.u8("precision")?;
    Precision::from_byte_width(w).ok_or_else(|| Error::Format(format!("invalid scalar width {w}")))
}

pub fn encode_params<'a, T: Scalar>(params: impl IntoIterator<Item = &'a Param<T>>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.push(WEIGHT_VERSION);
    out.push(T::PRECISION.byte_width() as u8);
    for p in params {
        put_u32(&mut out, p.name.len())?;
        out.extend_from_slice(p.name.as_bytes());
        let rank = u8::try_from(p.shape.len()).map_err(|_| Error::Format(format!("rank of `{}` too large", p.name)))?;
        out.push(rank);
        for &d in &p.shape {
            put_u32(&mut out, d)?;
        }
        p.data.iter().for_each(|v| v.write_le(&mut out));
    }
    Ok(out)
}

/// Precision recorded in a weight container header.
pub fn container_precision(bytes: &[u8]) -> Result<Precision> {
    header(&mut Reader { bytes, pos: 0 }, WEIGHT_MAGIC, "weight container")
}

pub fn decode_params<T: Scalar>(bytes: &[u8]) -> Result<Vec<Param<T>>> {
    let mut r = Reader { bytes, pos: 0 };
    let precision = header(&mut r, WEIGHT_MAGIC, "weight container")?;
    if precision != T::PRECISION {
        return Err(Error::Format(format!(
            "container holds {} scalars, {} requested",
            precision.name(),
            T::PRECISION.name()
        )));
    }
    let mut params = Vec::new();
    while !r.done() {
        let len = r.u32("name length")?;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let shape = (0..rank).map(|_| r.u32("dimension")).collect::<Result<Vec<_>>>()?;
        let count = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let count = count.ok_or_else(|| Error::Format(format!("shape of `{name}` overflows")))?;
        let data = r.scalars(count, &name)?;
        params.push(Param::new(name, shape, data)?);
    }
    Ok(params)
}

pub fn encode_tensor<T: Scalar>(x: &Tensor<T>) -> Result<Vec<u8>> {
    let s = x.shape();
    let mut out = Vec::with_capacity(25 + s.numel() * T::PRECISION.byte_width());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::PRECISION.byte_width() as u8);
    for d in [s.n, s.c, s.h, s.w] {
        put_u32(&mut out, d)?;
    }
    x.data().iter().for_each(|v| v.write_le(&mut out));
    Ok(out)
}

/// Decodes a raw tensor file, converting to `T` if the stored width differs.
pub fn decode_tensor<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let precision = header(&mut r, TENSOR_MAGIC, "raw tensor file")?;
    let dims = (0..4).map(|_| r.u32("shape")).collect::<Result<Vec<_>>>()?;
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
    let data: Vec<T> = match precision {
        Precision::F32 => r.scalars::<f32>(shape.numel(), "tensor data")?.into_iter().map(|v| T::from_f64(v as f64)).collect(),
        Precision::F64 => r.scalars::<f64>(shape.numel(), "tensor data")?.into_iter().map(T::from_f64).collect(),
    };
    if !r.done() {
        return Err(Error::Format(format!("{} trailing bytes after tensor data", bytes.len() - r.pos)));
    }
    Tensor::new(shape, data)
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, x: &Tensor<T>) -> Result<()> {
    Ok(fs::write(path, encode_tensor(x)?)?)
}
