//! Named parameter storage.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type ParamId = usize;

/// Role of a parameter; decides weight decay, penalties and projection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Real-valued encoder kernel.
    EncoderWeight,
    /// Temporal-layer synaptic weights; rows enter the weight-sum penalty.
    Weight,
    Bias,
    /// Batch-norm scale and shift.
    Norm,
    /// Skip-branch delays, kept nonnegative.
    Delay,
    /// Non-trainable state (batch-norm running statistics).
    Buffer,
}

impl ParamKind {
    pub fn trainable(self) -> bool {
        self != ParamKind::Buffer
    }

    pub fn decays(self) -> bool {
        matches!(self, ParamKind::EncoderWeight | ParamKind::Weight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

impl Param {
    /// Length of one neuron's input weight vector (for `Weight` params).
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: Vec<usize>,
        kind: ParamKind,
        data: Vec<f64>,
    ) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            kind,
            data,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn data(&self, id: ParamId) -> &[f64] {
        &self.params[id].data
    }

    pub fn data_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id].data
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Total number of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind.trainable())
            .map(|p| p.data.len())
            .sum()
    }

    /// Replaces every value from `other`, which must have identical names,
    /// shapes and kinds.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter slot {:?}", p.name)))?;
            if src.shape != p.shape || src.kind != p.kind {
                return Err(Error::Checkpoint(format!(
                    "parameter {:?} has shape {:?}/{:?}, expected {:?}/{:?}",
                    p.name, src.shape, src.kind, p.shape, p.kind
                )));
            }
            p.data.clone_from(&src.data);
        }
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameter slots, model has {}",
                other.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .map(|p| vec![0.0; p.data.len()])
            .collect()
    }
}
