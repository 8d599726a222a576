//! Model checkpoints.
//!
//! Layout: `TTFSCK1\0`, u32 version, u32 header length, JSON header (model
//! config, epoch, parameter index), the parameter values as f64 LE in index
//! order, optional Adam moments in the same order, and a CRC32 of everything
//! after the magic.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::graph::Graph;
use crate::engine::params::{ParamKind, ParamStore};
use crate::error::{Error, Result};
use crate::layers::arch::ModelConfig;
use crate::training::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TTFSCK1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    epoch: usize,
    params: Vec<ParamEntry>,
    optimizer_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub epoch: usize,
    pub params: ParamStore,
    pub optimizer: Option<AdamState>,
}

impl Checkpoint {
    pub fn from_graph(graph: &Graph, epoch: usize, optimizer: Option<&AdamState>) -> Self {
        Self {
            model: graph.config.clone(),
            epoch,
            params: graph.params.clone(),
            optimizer: optimizer.cloned(),
        }
    }

    /// Rebuilds the network; every parameter slot must be present.
    pub fn to_graph(&self) -> Result<Graph> {
        let mut g = Graph::build(&self.model, 0)?;
        g.params.load_from(&self.params)?;
        Ok(g)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = Header {
            model: self.model.clone(),
            epoch: self.epoch,
            params: self
                .params
                .iter()
                .map(|p| ParamEntry {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    kind: p.kind,
                })
                .collect(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend(CHECKPOINT_VERSION.to_le_bytes());
        out.extend((json.len() as u32).to_le_bytes());
        out.extend(json);
        let mut put = |v: &[f64]| v.iter().for_each(|x| out.extend(x.to_le_bytes()));
        for p in self.params.iter() {
            put(&p.data);
        }
        if let Some(o) = &self.optimizer {
            for m in o.m.iter().chain(&o.v) {
                put(m);
            }
        }
        let crc = crc32fast::hash(&out[8..]);
        out.extend(crc.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let body = &bytes[8..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[0..4].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes")) as usize;
        let json = body
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(json)?;
        let mut rest = &body[8 + hlen..];
        let mut take = |n: usize| -> Result<Vec<f64>> {
            if rest.len() < 8 * n {
                return Err(Error::Checkpoint("truncated parameter data".into()));
            }
            let (a, b) = rest.split_at(8 * n);
            rest = b;
            Ok(a.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let mut params = ParamStore::default();
        for e in &header.params {
            let data = take(e.shape.iter().product())?;
            params.add(e.name.clone(), e.shape.clone(), e.kind, data);
        }
        let optimizer = match header.optimizer_step {
            Some(step) => {
                let lens: Vec<usize> = params.iter().map(|p| p.data.len()).collect();
                let m = lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                let v = lens.iter().map(|&n| take(n)).collect::<Result<Vec<_>>>()?;
                Some(AdamState { step, m, v })
            }
            None => None,
        };
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                rest.len()
            )));
        }
        Ok(Self {
            model: header.model,
            epoch: header.epoch,
            params,
            optimizer,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, ckpt.encode()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::decode(&std::fs::read(path)?)
}
