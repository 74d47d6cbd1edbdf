//! Binary checkpoint format.
//!
//! A checkpoint is one line of compact JSON (the header) terminated by `\n`,
//! followed by every tensor as raw little-endian `f32` values in the order the
//! header lists them. Network tensors are stored layer by layer, weights
//! (row-major, `(out, in)`) before biases.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DenseNet, NetSpec};
use crate::{Error, Result};

pub const FORMAT_NAME: &str = "dmsynth-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub seed: u64,
    pub tensors: Vec<TensorInfo>,
    /// Component-specific metadata (network specs, schedule, scalers...).
    pub meta: serde_json::Value,
}

impl CheckpointHeader {
    pub fn new(kind: &str, seed: u64, meta: serde_json::Value) -> Self {
        CheckpointHeader {
            format: FORMAT_NAME.to_string(),
            version: FORMAT_VERSION,
            kind: kind.to_string(),
            seed,
            tensors: Vec::new(),
            meta,
        }
    }
}

/// Header plus tensor payloads, kept in `f32` exactly as stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub data: Vec<Vec<f32>>,
}

impl Checkpoint {
    pub fn new(kind: &str, seed: u64, meta: serde_json::Value) -> Self {
        Checkpoint {
            header: CheckpointHeader::new(kind, seed, meta),
            data: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: impl IntoIterator<Item = f64>) {
        let data: Vec<f32> = values.into_iter().map(|v| v as f32).collect();
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.header.tensors.push(TensorInfo {
            name: name.into(),
            shape,
        });
        self.data.push(data);
    }

    pub fn tensor(&self, name: &str) -> Result<(&TensorInfo, Vec<f64>)> {
        let idx = self
            .header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        Ok((
            &self.header.tensors[idx],
            self.data[idx].iter().map(|&v| v as f64).collect(),
        ))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        for tensor in &self.data {
            for v in tensor {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let newline = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..newline])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT_NAME {
            return Err(Error::Checkpoint(format!("unknown format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {FORMAT_VERSION})",
                header.version
            )));
        }
        let payload = &bytes[newline + 1..];
        let expected: usize = header.tensors.iter().map(|t| t.len() * 4).sum();
        if payload.len() != expected {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, header describes {expected}",
                payload.len()
            )));
        }
        let mut data = Vec::with_capacity(header.tensors.len());
        let mut offset = 0;
        for t in &header.tensors {
            let n = t.len();
            let values = payload[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            data.push(values);
        }
        Ok(Checkpoint { header, data })
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

impl DenseNet {
    /// Appends this network's tensors under `prefix`.
    pub fn push_tensors(&self, ckpt: &mut Checkpoint, prefix: &str) {
        for (k, l) in self.layers().iter().enumerate() {
            let (o, i) = l.weight.dim();
            ckpt.push(format!("{prefix}layer{k}.weight"), vec![o, i], l.weight.iter().copied());
            ckpt.push(format!("{prefix}layer{k}.bias"), vec![o], l.bias.iter().copied());
        }
    }

    /// Rebuilds a network of `spec` from tensors stored under `prefix`.
    pub fn from_tensors(ckpt: &Checkpoint, prefix: &str, spec: NetSpec, seed: u64) -> Result<Self> {
        let mut net = DenseNet::zeroed(spec)?;
        net.seed = seed;
        let dims = net.spec().layer_dims();
        for (k, (i, o)) in dims.into_iter().enumerate() {
            let (wi, w) = ckpt.tensor(&format!("{prefix}layer{k}.weight"))?;
            if wi.shape != [o, i] {
                return Err(Error::Checkpoint(format!(
                    "layer {k} weight shape {:?}, spec wants [{o}, {i}]",
                    wi.shape
                )));
            }
            let (bi, b) = ckpt.tensor(&format!("{prefix}layer{k}.bias"))?;
            if bi.shape != [o] {
                return Err(Error::Checkpoint(format!("layer {k} bias shape {:?}", bi.shape)));
            }
            let layer = &mut net.layers_mut()[k];
            layer.weight.as_slice_mut().expect("standard layout").copy_from_slice(&w);
            layer.bias.as_slice_mut().expect("standard layout").copy_from_slice(&b);
        }
        Ok(net)
    }

    /// Stand-alone checkpoint holding just this network.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({ "net": self.spec() });
        let mut ckpt = Checkpoint::new("dense-net", self.seed(), meta);
        self.push_tensors(&mut ckpt, "");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let spec: NetSpec = serde_json::from_value(ckpt.header.meta["net"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad net spec: {e}")))?;
        Self::from_tensors(ckpt, "", spec, ckpt.header.seed)
    }
}
