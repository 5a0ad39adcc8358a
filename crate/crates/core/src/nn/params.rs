//! Named parameter storage and the weight checkpoint format.
//!
//! A checkpoint is `MAGIC`, a little-endian `u32` header length, a JSON
//! header (`config` plus one `{name, shape, kind}` record per tensor), then
//! every tensor as little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BLASTW01";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl ParamKind {
    /// Running statistics are buffers updated outside the optimizer.
    pub fn trainable(self) -> bool {
        !matches!(self, ParamKind::RunningMean | ParamKind::RunningVar)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<F>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor<F>) -> ParamId {
        let name = name.into();
        debug_assert!(self.params.iter().all(|p| p.name != name), "duplicate parameter {name}");
        self.params.push(Param { name, kind, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    /// Copies every value from `other`, which must have the same layout.
    pub fn copy_from(&mut self, other: &ParamStore<F>) -> Result<()> {
        self.check_layout(other.params.iter().map(|p| (p.name.as_str(), p.value.shape())))?;
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            dst.value = src.value.clone();
        }
        Ok(())
    }

    fn check_layout<'a>(&self, entries: impl ExactSizeIterator<Item = (&'a str, [usize; 4])>) -> Result<()> {
        if entries.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                self.params.len()
            )));
        }
        for (p, (name, shape)) in self.params.iter().zip(entries) {
            if p.name != name || p.value.shape() != shape {
                return Err(Error::Shape(format!(
                    "checkpoint tensor {name} {shape:?} does not match model tensor {} {:?}",
                    p.name,
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 4],
    kind: ParamKind,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    tensors: Vec<TensorRecord>,
}

impl ParamStore<f32> {
    pub fn write_checkpoint(&self, config: &impl Serialize, w: &mut impl Write) -> Result<()> {
        let header = Header {
            config: serde_json::to_value(config)?,
            tensors: self
                .params
                .iter()
                .map(|p| TensorRecord {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    kind: p.kind,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for p in &self.params {
            buf.clear();
            buf.extend(p.value.data().iter().flat_map(|v| v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn save(&self, config: &impl Serialize, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_checkpoint(config, &mut f)?;
        f.flush()?;
        Ok(())
    }

    /// Overwrites this store's values from a checkpoint whose layout must
    /// match exactly. Returns the stored config record.
    pub fn read_checkpoint_into(&mut self, r: &mut impl Read) -> Result<serde_json::Value> {
        let (config, tensors, data) = read_raw(r)?;
        self.check_layout(tensors.iter().map(|t| (t.name.as_str(), t.shape)))?;
        let mut off = 0;
        for p in &mut self.params {
            let n = p.value.numel();
            p.value.data_mut().copy_from_slice(&data[off..off + n]);
            off += n;
        }
        Ok(config)
    }
}

/// Reads only the config record of a checkpoint.
pub fn read_checkpoint_config(path: &Path) -> Result<serde_json::Value> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(|e| crate::binio::with_path(e, path))?);
    Ok(read_raw(&mut f)?.0)
}

fn read_raw(r: &mut impl Read) -> Result<(serde_json::Value, Vec<TensorRecord>, Vec<f32>)> {
    let bad = |msg: String| Error::Shape(format!("invalid checkpoint: {msg}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json)?;
    let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() != total * 4 {
        return Err(bad(format!("payload is {} bytes, header declares {}", bytes.len(), total * 4)));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((header.config, header.tensors, data))
}
