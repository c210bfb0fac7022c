//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CIFT"                     4 bytes
//! version                    u32 (currently 1)
//! record count               u32
//! per record:
//!   name length              u32, then that many UTF-8 bytes
//!   dtype                    u8  (0 = f32, 1 = u8, 2 = i32)
//!   rank                     u8
//!   dims                     rank × u32
//!   payload                  row-major elements
//! ```

use std::collections::HashSet;
use std::path::Path;

use cifrenet_core::Tensor;

use crate::error::{Error, Result};
use crate::fsio;

pub const MAGIC: [u8; 4] = *b"CIFT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    I32(Vec<i32>),
}

impl TensorData {
    pub fn dtype_code(&self) -> u8 {
        match self {
            Self::F32(_) => 0,
            Self::U8(_) => 1,
            Self::I32(_) => 2,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U8(v) => v.len(),
            Self::I32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: &[usize], data: TensorData) -> Result<Self> {
        let name = name.into();
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::Invalid(format!(
                "record `{name}`: shape {shape:?} needs {want} elements, got {}",
                data.len()
            )));
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor<f32>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: TensorData::F32(t.data().to_vec()),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor<f32>> {
        match &self.data {
            TensorData::F32(v) => Ok(Tensor::new(&self.shape, v.clone())?),
            other => Err(Error::Invalid(format!(
                "record `{}` has dtype {}, expected f32",
                self.name,
                other.dtype_code()
            ))),
        }
    }
}

pub fn encode(records: &[Record]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32_len(records.len(), "record count")?.to_le_bytes());
    for r in records {
        if !seen.insert(r.name.as_str()) {
            return Err(Error::Invalid(format!("duplicate record name `{}`", r.name)));
        }
        if r.shape.iter().product::<usize>() != r.data.len() {
            return Err(Error::Invalid(format!("record `{}` shape/payload mismatch", r.name)));
        }
        let rank = u8::try_from(r.shape.len())
            .map_err(|_| Error::Invalid(format!("record `{}` has rank {} > 255", r.name, r.shape.len())))?;
        out.extend_from_slice(&u32_len(r.name.len(), "name length")?.to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.data.dtype_code());
        out.push(rank);
        for &d in &r.shape {
            out.extend_from_slice(&u32_len(d, "dimension")?.to_le_bytes());
        }
        match &r.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
            TensorData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Invalid(format!("{what} {n} does not fit in 32 bits")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let left = self.buf.len() - self.pos;
        if n > left {
            return Err(Error::format(
                self.pos,
                format!("truncated {what}: expected {n} bytes, found {left}"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"CIFT\""));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = c.u32("record count")?;
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for _ in 0..count {
        let start = c.pos;
        let len = c.u32("name length")? as usize;
        let name_at = c.pos;
        let name = std::str::from_utf8(c.take(len, "name")?)
            .map_err(|e| Error::format(name_at + e.valid_up_to(), "record name is not UTF-8"))?
            .to_string();
        if !seen.insert(name.clone()) {
            return Err(Error::format(start, format!("duplicate record name `{name}`")));
        }
        let dtype_at = c.pos;
        let dtype = c.u8("dtype")?;
        let rank = c.u8("rank")?;
        let mut shape = Vec::with_capacity(rank as usize);
        for _ in 0..rank {
            shape.push(c.u32("dimension")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::format(dtype_at, format!("record `{name}` element count overflows")))?;
        let width = match dtype {
            0 | 2 => 4,
            1 => 1,
            d => return Err(Error::format(dtype_at, format!("unknown dtype code {d}"))),
        };
        let bytes = count
            .checked_mul(width)
            .ok_or_else(|| Error::format(dtype_at, format!("record `{name}` payload size overflows")))?;
        let payload = c.take(bytes, &format!("payload of `{name}`"))?;
        let words = || payload.chunks_exact(4).map(|b| [b[0], b[1], b[2], b[3]]);
        let data = match dtype {
            0 => TensorData::F32(words().map(f32::from_le_bytes).collect()),
            1 => TensorData::U8(payload.to_vec()),
            _ => TensorData::I32(words().map(i32::from_le_bytes).collect()),
        };
        records.push(Record { name, shape, data });
    }
    if c.pos != buf.len() {
        return Err(Error::format(c.pos, format!("{} trailing bytes", buf.len() - c.pos)));
    }
    Ok(records)
}

pub fn save_container(path: &Path, records: &[Record]) -> Result<()> {
    fsio::write_atomic(path, &encode(records)?)
}

pub fn load_container(path: &Path) -> Result<Vec<Record>> {
    decode(&fsio::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_container() {
        let bytes = encode(&[]).unwrap();
        assert_eq!(bytes, b"CIFT\x01\0\0\0\0\0\0\0");
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn bad_magic_offset_zero() {
        let mut bytes = encode(&[]).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let r = Record::new("w", &[2], TensorData::F32(vec![1.0, 2.0])).unwrap();
        let bytes = encode(&[r]).unwrap();
        let cut = &bytes[..bytes.len() - 3];
        match decode(cut) {
            Err(Error::Format { offset, msg }) => {
                assert_eq!(offset as usize, bytes.len() - 8);
                assert!(msg.contains("expected 8 bytes, found 5"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_names_rejected() {
        let r = Record::new("a", &[1], TensorData::U8(vec![1])).unwrap();
        assert!(encode(&[r.clone(), r]).is_err());
    }
}
