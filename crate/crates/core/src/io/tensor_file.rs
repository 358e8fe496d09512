//! `LDAT` binary arrays: magic, version, dtype code, rank, extents, payload.

use std::path::Path;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::tensor::{DType, Shape, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"LDAT";
pub const TENSOR_VERSION: u32 = 1;

/// A dense array of any rank, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub dtype: DType,
    pub data: Vec<f64>,
}

pub fn encode_array(dims: &[usize], dtype: DType, data: &[f64]) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    if dims.is_empty() || dims.contains(&0) || count != data.len() {
        return Err(Error::dimension("encode_array", count, data.len()));
    }
    let mut out = Vec::with_capacity(16 + 4 * dims.len() + count * dtype.size());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.extend_from_slice(&dtype.code().to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d).map_err(|_| Error::config(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        DType::F32 => data
            .iter()
            .for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        DType::F64 => data
            .iter()
            .for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(self.pos, format!("truncated {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Decodes one array starting at `*pos` and advances past it.
pub fn decode_array(bytes: &[u8], pos: &mut usize) -> Result<Array> {
    let mut c = Cursor { bytes, pos: *pos };
    if c.take(4, "magic")? != TENSOR_MAGIC {
        return Err(Error::UnsupportedFormat("missing LDAT magic".into()));
    }
    let version = c.u32("version")?;
    if version != TENSOR_VERSION {
        return Err(Error::UnsupportedFormat(format!(
            "tensor file version {version}"
        )));
    }
    let at = c.pos;
    let code = c.u32("dtype")?;
    let dtype = DType::from_code(code)
        .ok_or_else(|| Error::parse(at, format!("unknown dtype code {code}")))?;
    let at = c.pos;
    let rank = c.u32("rank")? as usize;
    if rank == 0 {
        return Err(Error::parse(at, "rank must be at least 1"));
    }
    let mut dims = Vec::with_capacity(rank);
    let mut count = 1usize;
    for _ in 0..rank {
        let at = c.pos;
        let d = c.u32("extent")? as usize;
        if d == 0 {
            return Err(Error::parse(at, "zero extent"));
        }
        count = count
            .checked_mul(d)
            .ok_or_else(|| Error::parse(at, "element count overflows"))?;
        dims.push(d);
    }
    let payload = c.take(
        count
            .checked_mul(dtype.size())
            .ok_or_else(|| Error::parse(c.pos, "payload size overflows"))?,
        "payload",
    )?;
    let data = match dtype {
        DType::F32 => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect(),
        DType::F64 => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
            .collect(),
    };
    *pos = c.pos;
    Ok(Array { dims, dtype, data })
}

/// Encodes a tensor as a rank-4 `(n, c, h, w)` array in its own dtype.
pub fn encode_tensor(t: &Tensor) -> Result<Vec<u8>> {
    encode_array(&t.shape().dims(), t.dtype(), t.as_slice())
}

/// Decodes a whole file. Ranks below 4 are padded with leading ones.
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let a = decode_array(bytes, &mut pos)?;
    if pos != bytes.len() {
        return Err(Error::parse(pos, "trailing bytes after payload"));
    }
    if a.dims.len() > 4 {
        return Err(Error::UnsupportedFormat(format!(
            "rank {} tensors",
            a.dims.len()
        )));
    }
    let mut d = [1usize; 4];
    d[4 - a.dims.len()..].copy_from_slice(&a.dims);
    Ok(Tensor::from_vec(Shape::new(d[0], d[1], d[2], d[3]), a.data)?.with_dtype(a.dtype))
}

pub fn write_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    write_bytes(path.as_ref(), &encode_tensor(t)?)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_tensor(&read_bytes(path.as_ref())?)
}
