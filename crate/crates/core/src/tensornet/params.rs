use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::{Gradients, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Ordered, named collection of parameter tensors belonging to one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.values[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Places every tensor on `g`, as differentiable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<NodeId> {
        self.values
            .iter()
            .map(|v| if trainable { g.param(v.clone()) } else { g.input(v.clone()) })
            .collect()
    }

    /// Gradients for the bound leaves, zero where the loss did not reach.
    pub fn collect_grads(&self, bound: &[NodeId], grads: &Gradients) -> Vec<Tensor> {
        self.values
            .iter()
            .zip(bound)
            .map(|(v, &id)| grads.get(id).cloned().unwrap_or_else(|| Tensor::zeros(v.shape())))
            .collect()
    }

    /// Replaces all values from `(name, tensor)` records, matching by name and shape.
    pub fn load(&mut self, records: &[(String, Tensor)], prefix: &str) -> Result<()> {
        for (name, value) in self.names.iter().zip(self.values.iter_mut()) {
            let key = format!("{prefix}{name}");
            let (_, t) = records
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| Error::format("checkpoint", format!("missing record {key}")))?;
            if t.shape() != value.shape() {
                return Err(Error::format(
                    "checkpoint",
                    format!("{key}: shape {:?}, expected {:?}", t.shape(), value.shape()),
                ));
            }
            *value = t.clone();
        }
        Ok(())
    }
}

/// Uniform fan-in initialisation, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches data")
}
