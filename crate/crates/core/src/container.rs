//! Named-tensor container.
//!
//! Layout: bytes `0..8` hold the little-endian `u64` header length `n`;
//! bytes `8..8+n` hold a UTF-8 JSON header listing every tensor's name,
//! element type, shape and byte offset (relative to the data section) plus a
//! free-form string metadata map; the remaining bytes are the raw
//! little-endian IEEE-754 tensor data at the stated offsets.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> &'static str {
        match self {
            TensorData::F32(_) => "f32",
            TensorData::F64(_) => "f64",
        }
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }

    pub fn to_scalar<F: Scalar>(&self) -> Vec<F> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| F::of(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| F::of(x)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    /// Stores any scalar tensor as `f32`.
    pub fn f32_from<F: Scalar>(name: impl Into<String>, t: &Tensor<F>) -> Self {
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data: TensorData::F32(t.data().iter().map(|x| x.f64() as f32).collect()),
        }
    }

    /// Stores a tensor in its own element type, so the round trip is exact.
    pub fn native<F: Scalar>(name: impl Into<String>, t: &Tensor<F>) -> Self {
        let data = if F::DTYPE == "f64" {
            TensorData::F64(t.data().iter().map(|x| x.f64()).collect())
        } else {
            TensorData::F32(t.data().iter().map(|x| x.f64() as f32).collect())
        };
        Self {
            name: name.into(),
            shape: t.shape().to_vec(),
            data,
        }
    }

    pub fn to_tensor<F: Scalar>(&self) -> Result<Tensor<F>> {
        Tensor::new(self.shape.clone(), self.data.to_scalar())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<NamedTensor>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

impl Container {
    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            entries.push(Entry {
                name: t.name.clone(),
                dtype: t.data.dtype().to_string(),
                shape: t.shape.clone(),
                offset,
            });
            offset += (t.data.len() * elem_size(t.data.dtype())) as u64;
        }
        let header = serde_json::to_vec(&Header {
            metadata: self.metadata.clone(),
            tensors: entries,
        })
        .expect("header serialises");
        let mut out = Vec::with_capacity(8 + header.len() + offset as usize);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in &self.tensors {
            t.data.write_le(&mut out);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Format("file shorter than the 8-byte length prefix".into()));
        }
        let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let body = &bytes[8..];
        if n > body.len() {
            return Err(Error::Format(format!(
                "header length {n} exceeds remaining {} bytes",
                body.len()
            )));
        }
        let text = std::str::from_utf8(&body[..n]).map_err(|e| Error::Format(format!("header is not UTF-8: {e}")))?;
        let header: Header =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("header does not parse: {e}")))?;
        let data = &body[n..];
        let mut seen = HashSet::new();
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            if !seen.insert(e.name.clone()) {
                return Err(Error::Format(format!("duplicate tensor `{}`", e.name)));
            }
            let size = match e.dtype.as_str() {
                "f32" | "f64" => elem_size(&e.dtype),
                other => {
                    return Err(Error::Format(format!(
                        "tensor `{}` has unsupported dtype `{other}`",
                        e.name
                    )))
                }
            };
            let numel: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = numel
                .checked_mul(size)
                .and_then(|nb| start.checked_add(nb))
                .filter(|&end| end <= data.len())
                .ok_or_else(|| {
                    Error::Format(format!(
                        "tensor `{}` ({:?} {}) extends past the end of the data section",
                        e.name, e.shape, e.dtype
                    ))
                })?;
            let raw = &data[start..end];
            let td = if e.dtype == "f32" {
                TensorData::F32(
                    raw.chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                )
            } else {
                TensorData::F64(
                    raw.chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                )
            };
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: td,
            });
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 over every tensor's name, shape and little-endian bytes.
    pub fn tensor_digest(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(t.name.as_bytes());
            h.update([0u8]);
            for d in &t.shape {
                h.update((*d as u64).to_le_bytes());
            }
            let mut buf = Vec::with_capacity(t.data.len() * 8);
            t.data.write_le(&mut buf);
            h.update(&buf);
        }
        hex(&h.finalize())
    }
}

fn elem_size(dtype: &str) -> usize {
    if dtype == "f64" {
        8
    } else {
        4
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}
