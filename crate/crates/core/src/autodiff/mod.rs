//! Minimal reverse-mode automatic differentiation with the layers a
//! PointNet-style network needs, plus the Adam optimizer.

mod adam;
mod batchnorm;
mod gradcheck;
mod graph;
mod tensor;

use std::collections::BTreeMap;

pub use adam::{adam_step, AdamState};
pub use batchnorm::{BatchNormState, Mode, BN_EPS, BN_MOMENTUM};
pub use gradcheck::{finite_difference_grad, max_relative_error};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Vec<f64>>;

/// A collection of named trainable tensors, visited in a stable order.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedTensors(BTreeMap<String, Tensor>);

impl NamedTensors {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.0.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }
}

impl Parameters for NamedTensors {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (k, v) in &self.0 {
            f(k, v);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (k, v) in &mut self.0 {
            f(k, v);
        }
    }
}
