use std::collections::HashMap;

use super::{AdError, Gradients, Tape, Tensor, Var};

/// Named trainable tensors, kept in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), AdError> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(AdError::Shape(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Places every parameter on the tape as a trainable leaf.
    pub fn attach(&self, tape: &mut Tape) -> Result<ParamVars, AdError> {
        let vars = self
            .tensors
            .iter()
            .map(|t| tape.param(t.clone()))
            .collect::<Result<_, _>>()?;
        Ok(ParamVars {
            vars,
            index: self.index.clone(),
        })
    }

    /// Handles for tensors already placed on a tape in store order, as done
    /// by [`crate::autodiff::grad_check`].
    pub fn bind(&self, vars: &[Var]) -> Result<ParamVars, AdError> {
        if vars.len() != self.tensors.len() {
            return Err(AdError::Shape(format!(
                "{} vars bound to a store of {} tensors",
                vars.len(),
                self.tensors.len()
            )));
        }
        Ok(ParamVars {
            vars: vars.to_vec(),
            index: self.index.clone(),
        })
    }

    /// Same layout check used before loading or copying parameters.
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.shape() == b.shape())
    }
}

/// Tape handles for an attached [`ParamStore`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: Vec<Var>,
    index: HashMap<String, usize>,
}

impl ParamVars {
    /// Panics on an unknown name; parameter names are fixed by the model
    /// that created the store.
    pub fn var(&self, name: &str) -> Var {
        match self.index.get(name) {
            Some(&i) => self.vars[i],
            None => panic!("unknown parameter {name}"),
        }
    }

    /// Gradients in store order, zero where a parameter was unused.
    pub fn collect_grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .map(|&v| match grads.get(v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(v).numel()],
            })
            .collect()
    }
}
