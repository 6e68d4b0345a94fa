use rand::Rng;

use super::graph::{Gradients, Graph, Var};
use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named, ordered trainable parameters of one model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Adds a tensor initialized uniformly in `±1/√fan_in`.
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
        self.add(
            name,
            Tensor::new(shape.to_vec(), data).expect("shape matches data"),
        )
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Places every parameter on `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        Bound(self.values.iter().map(|t| graph.param(t.clone())).collect())
    }

    /// Replaces values by name; every stored name must be present with a
    /// matching shape.
    pub fn load_entries(&mut self, entries: Vec<(String, Tensor)>) -> Result<()> {
        if entries.len() != self.values.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} parameters, model has {}",
                entries.len(),
                self.values.len()
            )));
        }
        for (name, tensor) in entries {
            let i = self
                .names
                .iter()
                .position(|n| *n == name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown parameter `{name}`")))?;
            if self.values[i].shape() != tensor.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load parameter",
                    lhs: self.values[i].shape().to_vec(),
                    rhs: tensor.shape().to_vec(),
                });
            }
            self.values[i] = tensor;
        }
        Ok(())
    }
}

/// Graph handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound(Vec<Var>);

impl Bound {
    /// Wraps vars that stand for a store's parameters, in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound(vars)
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.0[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    /// Gradients in store order; parameters the loss did not reach get
    /// zeros.
    pub fn gradients(&self, grads: &Gradients, store: &ParamStore) -> Vec<Tensor> {
        self.0
            .iter()
            .zip(store.values())
            .map(|(&v, t)| grads.get_or_zeros(v, t))
            .collect()
    }
}
