use super::tape::Gradients;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a named learnable tensor in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Flat, insertion-ordered collection of named parameters.
///
/// Names are dotted paths (`encoder.normal.w_fwd.0`); the first segment is
/// the parameter group.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() {
            return Err(Error::Contract(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(ParamId(self.values.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    /// Replaces a parameter value; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape(format!(
                "parameter {} has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    /// Parameters whose group (first name segment) equals `group`.
    pub fn group(&self, group: &str) -> Vec<ParamId> {
        self.ids()
            .filter(|&id| self.names[id.0].split('.').next() == Some(group))
            .collect()
    }

    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}

/// Additive gradient accumulator, one buffer per parameter. Zeroed only
/// when explicitly reset (on optimizer apply).
#[derive(Clone, Debug)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
    accumulated: usize,
}

impl GradBuffer {
    pub fn new(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.values.iter().map(|v| Tensor::zeros(v.shape())).collect(),
            accumulated: 0,
        }
    }

    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in grads.params() {
            self.grads[id.0].add_assign(g);
        }
        self.accumulated += 1;
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    /// Number of backward passes folded in since the last reset.
    pub fn accumulated(&self) -> usize {
        self.accumulated
    }

    pub(crate) fn restore(&mut self, grads: Vec<(usize, Tensor)>, accumulated: usize) {
        for (i, g) in grads {
            self.grads[i] = g;
        }
        self.accumulated = accumulated;
    }

    pub fn reset(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
        self.accumulated = 0;
    }
}
