//! Versioned binary container shared by extractor and mesh checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MPCKPT\0\0"
//! version    u32
//! kind       string   (u32 byte length + UTF-8)
//! metadata   u32 count, then (key string, value string) pairs
//! tensors    u32 count, then per tensor: name string, dtype u8
//!            (0 = f32, 1 = f64), ndim u32, dims u64 × ndim
//! payload    each tensor's values in table order
//! ```
//!
//! Decoding is all-or-nothing: a truncated or padded file is an error.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MPCKPT\0\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, dtype: DType, dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor {
            name: name.to_owned(),
            dtype,
            dims,
            data,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub kind: String,
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: &str) -> Self {
        Container {
            kind: kind.to_owned(),
            ..Default::default()
        }
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Decode(format!("missing tensor `{name}`")))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.metadata
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Decode(format!("missing metadata `{key}`")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.meta(key)?
            .parse()
            .map_err(|_| Error::Decode(format!("bad value for metadata `{key}`")))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Decode(format!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.kind);
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.push(match t.dtype {
                DType::F32 => 0,
                DType::F64 => 1,
            });
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
        }
        for t in &self.tensors {
            match t.dtype {
                DType::F32 => t
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
                DType::F64 => t
                    .data
                    .iter()
                    .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Decode("bad magic, not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: VERSION,
            });
        }
        let kind = r.string()?;
        let mut metadata = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        let count = r.u32()? as usize;
        let mut table = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.string()?;
            let dtype = match r.take(1)?[0] {
                0 => DType::F32,
                1 => DType::F64,
                other => return Err(Error::Decode(format!("unknown dtype tag {other}"))),
            };
            let ndim = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                dims.push(usize::try_from(r.u64()?).map_err(|_| Error::Decode("dim overflow".into()))?);
            }
            table.push((name, dtype, dims));
        }
        let mut tensors = Vec::with_capacity(table.len());
        for (name, dtype, dims) in table {
            let len = dims
                .iter()
                .try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::Decode(format!("tensor `{name}` too large")))?;
            let width = if dtype == DType::F32 { 4 } else { 8 };
            let raw = r.take(len.checked_mul(width).ok_or_else(|| Error::Decode("size overflow".into()))?)?;
            let data = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            };
            tensors.push(Tensor {
                name,
                dtype,
                dims,
                data,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Decode(format!(
                "{} trailing bytes after payload",
                bytes.len() - r.pos
            )));
        }
        Ok(Container {
            kind,
            metadata,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::decode(&bytes)
    }
}

/// Git-style content hash: SHA-256 over `"blob <len>\0" ++ bytes`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Decode(format!("truncated file at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Decode("invalid UTF-8".into()))
    }
}
