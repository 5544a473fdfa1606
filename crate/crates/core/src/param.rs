use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A named trainable tensor. Names are slash-separated paths whose first
/// segment is the partition ("trunk", "policy" or "classifier"), e.g.
/// `trunk/conv3/weight`.
#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub value: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn new(name: &str, mut value: Tensor<S>) -> Self {
        value.enable_grad();
        Parameter {
            name: name.to_string(),
            value,
        }
    }

    pub fn partition(&self) -> &str {
        self.name.split('/').next().unwrap_or("")
    }
}

/// The full parameter list of a model, indexed by slot. Slot order is the
/// construction order and is what ties gradients, optimizer state and
/// checkpoint entries together.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<S: Scalar> {
    params: Vec<Parameter<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<S>) -> Result<usize> {
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.params.push(Parameter::new(name, value));
        Ok(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, slot: usize) -> &Parameter<S> {
        &self.params[slot]
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Parameter<S> {
        &mut self.params[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<S>> {
        self.params.iter_mut()
    }

    pub fn slot_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.zero_grad();
        }
    }

    /// Total number of trainable scalars, optionally restricted to one
    /// partition.
    pub fn count(&self, partition: Option<&str>) -> usize {
        self.params
            .iter()
            .filter(|p| partition.map_or(true, |pt| p.partition() == pt))
            .map(|p| p.value.numel())
            .sum()
    }
}
