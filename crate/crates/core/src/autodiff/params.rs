use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Graph, Tensor, Var};

/// Named trainable tensors with their gradient accumulators.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.grads.push(Tensor::zeros(value.rows(), value.cols()));
        self.values.push(value);
        self.names.push(name.into());
        self.values.len() - 1
    }

    /// He-style fan-in initialised `fan_in x fan_out` weight and zero bias.
    /// Returns the index of the weight; the bias follows it.
    pub fn add_linear<R: Rng + ?Sized>(&mut self, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> usize {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let w = Tensor::from_fn(fan_in, fan_out, |_, _| normal.sample(rng));
        let idx = self.add(format!("{name}.weight"), w);
        self.add(format!("{name}.bias"), Tensor::zeros(1, fan_out));
        idx
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

    pub fn grads(&self) -> &[Tensor] {
        &self.grads
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.values[i]
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Puts every parameter on the graph as a trainable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|v| g.param(v.clone())).collect()
    }

    /// Puts every parameter on the graph as a constant (frozen networks).
    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.values.iter().map(|v| g.constant(v.clone())).collect()
    }

    /// Adds the graph's leaf gradients for `vars` into this set's accumulators.
    pub fn accumulate_grads(&mut self, g: &Graph, vars: &[Var]) {
        for (acc, &v) in self.grads.iter_mut().zip(vars) {
            if let Some(grad) = g.grad(v) {
                acc.add_assign(grad);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn flat_grad(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.data().iter().copied()).collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|g| g.data().iter().copied()).collect()
    }

    /// Overwrites gradient accumulators from a flat vector in parameter order.
    pub fn set_flat_grad(&mut self, flat: &[f64]) {
        debug_assert_eq!(flat.len(), self.num_scalars());
        let mut off = 0;
        for g in &mut self.grads {
            let n = g.len();
            g.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.shape() == b.shape())
    }
}
