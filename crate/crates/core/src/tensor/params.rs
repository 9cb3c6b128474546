use std::collections::HashMap;

use super::Tensor;
use crate::error::{Error, Result};

/// Named, ordered set of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `t` under `name` as a gradient-recording leaf.
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        let t = t.requires_grad();
        match self.index.get(&name) {
            Some(&i) => self.tensors[i] = t,
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.tensors.push(t);
            }
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::MissingField(name.to_string()))
    }

    /// Same names, with `tensors` used as given (no re-wrapping), so
    /// gradients land on the caller's leaves.
    pub fn with_tensors(&self, tensors: Vec<Tensor>) -> Result<ParamStore> {
        if tensors.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "{} tensors for {} parameters",
                tensors.len(),
                self.tensors.len()
            )));
        }
        for ((name, old), new) in self.names.iter().zip(&self.tensors).zip(&tensors) {
            if old.shape() != new.shape() {
                return Err(crate::error::shape_err(
                    "with_tensors",
                    format!("{name}: {:?} vs {:?}", old.shape(), new.shape()),
                ));
            }
        }
        Ok(ParamStore {
            names: self.names.clone(),
            tensors,
            index: self.index.clone(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Current gradients, zeros where none was accumulated.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }

    pub fn zero_grad(&self) {
        self.tensors.iter().for_each(Tensor::zero_grad);
    }
}
