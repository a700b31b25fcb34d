//! Versioned binary container for named tensors plus a JSON header.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RCLCKPT\0"
//! version    u32      currently 1
//! dtype      u8       0 = f32, 1 = f64
//! meta_len   u64      followed by meta_len bytes of UTF-8 JSON
//! count      u64      number of tensors, each stored as:
//!   name_len u32, name (UTF-8), rows u64, cols u64,
//!   rows*cols values of dtype, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::tensor::{Precision, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"RCLCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    Magic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint stores {found:?} values, expected {expected:?}")]
    Dtype {
        expected: Precision,
        found: Option<Precision>,
    },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("checkpoint metadata: {0}")]
    Meta(#[from] serde_json::Error),
    #[error("tensor name is not UTF-8")]
    Name,
    #[error("checkpoint is missing tensor {0:?}")]
    Missing(String),
    #[error("tensor {name:?} has shape {found:?}, expected {expected:?}")]
    Shape {
        name: String,
        expected: [usize; 2],
        found: [usize; 2],
    },
}

type Result<T> = std::result::Result<T, CheckpointError>;

fn dtype_code(p: Precision) -> u8 {
    match p {
        Precision::F32 => 0,
        Precision::F64 => 1,
    }
}

/// Serializes `meta` and `tensors` into the container format.
pub fn encode<T: Scalar, M: Serialize>(
    meta: &M,
    tensors: &[(String, &Tensor<T>)],
) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(meta)?;
    let payload: usize = tensors.iter().map(|(_, t)| t.len()).sum();
    let mut out = Vec::with_capacity(64 + meta.len() + payload * T::PRECISION.byte_width());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype_code(T::PRECISION));
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta);
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()) as usize)
    }
}

/// Named tensors and metadata read back from a container.
#[derive(Debug, Clone)]
pub struct Contents<T: Scalar, M> {
    pub meta: M,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar, M> Contents<T, M> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// The tensor called `name`, which must have `shape`.
    pub fn expect(&self, name: &str, shape: [usize; 2]) -> Result<&Tensor<T>> {
        let t = self
            .get(name)
            .ok_or_else(|| CheckpointError::Missing(name.to_string()))?;
        if t.shape() != shape {
            return Err(CheckpointError::Shape {
                name: name.to_string(),
                expected: shape,
                found: t.shape(),
            });
        }
        Ok(t)
    }
}

/// Reads only the value type of a container.
pub fn peek_precision(bytes: &[u8]) -> Result<Precision> {
    let mut r = Reader { bytes };
    if r.take(8, "magic")? != MAGIC {
        return Err(CheckpointError::Magic);
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    match r.take(1, "dtype")?[0] {
        0 => Ok(Precision::F32),
        1 => Ok(Precision::F64),
        _ => Err(CheckpointError::Dtype {
            expected: Precision::F32,
            found: None,
        }),
    }
}

pub fn decode<T: Scalar, M: DeserializeOwned>(bytes: &[u8]) -> Result<Contents<T, M>> {
    let found = peek_precision(bytes)?;
    if found != T::PRECISION {
        return Err(CheckpointError::Dtype {
            expected: T::PRECISION,
            found: Some(found),
        });
    }
    let mut r = Reader {
        bytes: &bytes[13..],
    };
    let meta_len = r.u64("metadata length")?;
    let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
    let count = r.u64("tensor count")?;
    let width = T::PRECISION.byte_width();
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| CheckpointError::Name)?
            .to_string();
        let rows = r.u64("tensor rows")?;
        let cols = r.u64("tensor cols")?;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(width))
            .ok_or(CheckpointError::Truncated("tensor data"))?;
        let raw = r.take(n, "tensor data")?;
        let data: Vec<T> = raw.chunks_exact(width).map(T::read_le).collect();
        let t = Tensor::from_vec(rows, cols, data).map_err(|_| CheckpointError::Truncated("tensor data"))?;
        tensors.push((name, t));
    }
    Ok(Contents { meta, tensors })
}

pub fn save<T: Scalar, M: Serialize>(
    path: &Path,
    meta: &M,
    tensors: &[(String, &Tensor<T>)],
) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    // Write-then-rename so a crash never leaves a half-written checkpoint.
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|source| CheckpointError::Io {
        path: tmp.clone(),
        source,
    })?;
    fs::rename(&tmp, path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<T: Scalar, M: DeserializeOwned>(path: &Path) -> Result<Contents<T, M>> {
    decode(&read_file(path)?)
}
