use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Index of a parameter tensor inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// One entry of a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named, ordered collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable tensor under a unique name.
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains(&name) {
            return Err(Error::InvalidConfig(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Records every tensor as a gradient-tracking leaf, indexed by `ParamId`.
    pub fn record<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors.iter().map(|t| tape.leaf(t)).collect()
    }

    /// Records every tensor as a constant.
    pub fn record_constant<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.tensors
            .iter()
            .map(|t| {
                tape.constant(t.shape().to_vec(), t.data().to_vec())
                    .expect("tensor shape is consistent")
            })
            .collect()
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// All parameter values concatenated in registration order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count() {
            return Err(Error::shape("set_flat", &[self.count()], &[values.len()]));
        }
        let mut offset = 0;
        for t in &mut self.tensors {
            let n = t.numel();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn to_weights(&self) -> BTreeMap<String, WeightEntry> {
        self.iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    WeightEntry {
                        shape: t.shape().to_vec(),
                        data: t.data().to_vec(),
                    },
                )
            })
            .collect()
    }

    /// Overwrites values from a weight map; every parameter must be present
    /// with a matching shape.
    pub fn load_weights(&mut self, weights: &BTreeMap<String, WeightEntry>) -> Result<()> {
        for (name, tensor) in self.names.iter().zip(self.tensors.iter_mut()) {
            let entry = weights
                .get(name)
                .ok_or_else(|| Error::LayoutMismatch(format!("missing parameter {name}")))?;
            if entry.shape != tensor.shape() || entry.data.len() != tensor.numel() {
                return Err(Error::LayoutMismatch(format!(
                    "parameter {name}: expected shape {:?}, file has {:?}",
                    tensor.shape(),
                    entry.shape
                )));
            }
            tensor.data_mut().copy_from_slice(&entry.data);
        }
        if let Some(extra) = weights.keys().find(|k| !self.names.contains(k)) {
            return Err(Error::LayoutMismatch(format!("unexpected parameter {extra}")));
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_weights())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let weights: BTreeMap<String, WeightEntry> = serde_json::from_str(&text)?;
        self.load_weights(&weights)
    }
}
