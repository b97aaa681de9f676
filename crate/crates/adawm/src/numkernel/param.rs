//! Named parameter collections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::KernelError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered map from parameter name to tensor. Shapes are fixed at insertion;
/// gradient application goes through the optimizer, which only touches
/// trainable entries.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamSet {
    map: BTreeMap<String, Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<(), KernelError> {
        if self.map.contains_key(name) {
            return Err(KernelError::DuplicateParam(name.to_string()));
        }
        self.map.insert(name.to_string(), Param { value, trainable });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param, KernelError> {
        self.map.get(name).ok_or_else(|| KernelError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor, KernelError> {
        Ok(&self.get(name)?.value)
    }

    /// Overwrite the data of an existing entry; the shape must match.
    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<(), KernelError> {
        let p = self.map.get_mut(name).ok_or_else(|| KernelError::UnknownParam(name.to_string()))?;
        if p.value.shape() != value.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "set_value".into(),
                detail: format!("{:?} vs {:?} for {name}", p.value.shape(), value.shape()),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param, KernelError> {
        self.map.get_mut(name).ok_or_else(|| KernelError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in self.map.values_mut() {
            p.trainable = trainable;
        }
    }

    /// Total number of scalar elements across all entries.
    pub fn numel(&self) -> usize {
        self.map.values().map(|p| p.value.numel()).sum()
    }

    /// Deterministic byte serialization, used by frozen-parameter contracts.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (name, p) in &self.map {
            out.extend_from_slice(name.as_bytes());
            out.push(0);
            for d in p.value.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Copy values from `other` for every matching name.
    pub fn copy_values_from(&mut self, other: &ParamSet) -> Result<(), KernelError> {
        for (name, p) in &other.map {
            self.set_value(name, p.value.clone())?;
        }
        Ok(())
    }
}
