use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{mismatch, NeuralError, Tensor};

/// Named parameter tensors, iterated in name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, NeuralError> {
        self.tensors.get(name).ok_or_else(|| NeuralError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor, NeuralError> {
        self.tensors.get_mut(name).ok_or_else(|| NeuralError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Hex SHA-256 over names, shapes and the exact bit patterns of all values.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            h.update((t.shape().len() as u64).to_le_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Gradients of one scalar loss, keyed like the parameters they belong to.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradRecord {
    grads: BTreeMap<String, Tensor>,
}

impl GradRecord {
    /// Zero gradient for every parameter.
    pub fn zeros_like(params: &Params) -> Self {
        Self {
            grads: params.iter().map(|(k, t)| (k.clone(), Tensor::zeros(t.shape()))).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Keeps only gradients whose name satisfies `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.grads.retain(|k, _| keep(k));
    }

    pub(crate) fn accumulate(&mut self, name: &str, delta: &[f64]) -> Result<(), NeuralError> {
        let g = self.grads.get_mut(name).ok_or_else(|| NeuralError::UnknownParam(name.into()))?;
        if g.len() != delta.len() {
            return Err(mismatch("accumulate", g.shape(), &[delta.len()]));
        }
        for (a, d) in g.data_mut().iter_mut().zip(delta) {
            *a += d;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.grads.values().fold(0.0, |m, t| m.max(t.max_abs()))
    }
}
