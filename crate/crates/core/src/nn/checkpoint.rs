//! Checkpoint archive: the 8-byte magic `VSRLCKPT`, a little-endian `u64`
//! header length, a JSON header, then the raw little-endian tensor blobs in
//! header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use half::f16;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VSRLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Generator,
    Discriminator,
    FeatureExtractor,
    TrainState,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageDtype {
    #[default]
    F32,
    F16,
}

impl StorageDtype {
    fn width(self) -> usize {
        match self {
            StorageDtype::F32 => 4,
            StorageDtype::F16 => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: StorageDtype,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub spec: Value,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: Value,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub spec: Value,
    pub meta: Value,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn new(kind: CheckpointKind, spec: Value, tensors: BTreeMap<String, Tensor>) -> Self {
        Checkpoint {
            kind,
            spec,
            meta: Value::Null,
            tensors,
        }
    }

    pub fn with_meta(mut self, meta: Value) -> Self {
        self.meta = meta;
        self
    }

    pub fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self, dtype: StorageDtype) -> Result<Vec<u8>> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut blobs = Vec::new();
        for (name, t) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.dims().to_vec(),
                dtype,
            });
            let values = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            match dtype {
                StorageDtype::F32 => {
                    for v in values {
                        blobs.extend_from_slice(&v.to_le_bytes());
                    }
                }
                StorageDtype::F16 => {
                    for v in values {
                        blobs.extend_from_slice(&f16::from_f32(v).to_le_bytes());
                    }
                }
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            spec: self.spec.clone(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + blobs.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blobs);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], device: &Device) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if hlen > body.len() {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let mut blob = &body[hlen..];
        let mut tensors = BTreeMap::new();
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let size = n * e.dtype.width();
            if blob.len() < size {
                return Err(Error::Checkpoint(format!("truncated data for `{}`", e.name)));
            }
            let (raw, rest) = blob.split_at(size);
            blob = rest;
            let values: Vec<f32> = match e.dtype {
                StorageDtype::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
                StorageDtype::F16 => raw
                    .chunks_exact(2)
                    .map(|c| f16::from_le_bytes(c.try_into().expect("2 bytes")).to_f32())
                    .collect(),
            };
            let t = Tensor::from_vec(values, e.shape.as_slice(), device)?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor `{}`", e.name)));
            }
        }
        if !blob.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            kind: header.kind,
            spec: header.spec,
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path, dtype: StorageDtype) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        let bytes = self.to_bytes(dtype)?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path, device: &Device) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, device)
    }
}
