//! Minimal CPU layers with explicit forward/backward passes.
//!
//! Every layer keeps its parameters and their gradient accumulators side by
//! side. Forward passes are pure functions of `(input, parameters)`; backward
//! passes take the same input plus the output gradient, accumulate parameter
//! gradients, and return the input gradient.

mod adam;
mod batchnorm;
mod conv;
mod grid_sample;
mod linear;
mod ops;

pub use adam::{Adam, AdamConfig};
pub use batchnorm::{BatchNorm2d, BatchNormCache};
pub use conv::Conv2d;
pub use grid_sample::{affine_grid_sample, affine_grid_sample_backward};
pub use linear::Linear;
pub use ops::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, sigmoid_backward,
};

use rand::Rng;

/// A named tensor of weights plus its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![0.0; len],
            grad: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], v: f32) -> Self {
        let mut p = Self::zeros(shape);
        p.value.fill(v);
        p
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        for v in &mut p.value {
            *v = rng.random_range(-bound..=bound);
        }
        p
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Whether a visited tensor is trained by the optimizer or only carried in
/// checkpoints (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Trainable,
    Buffer,
}

/// Anything that owns named parameters.
pub trait Module {
    /// Visits every tensor in a stable order under dotted names.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param));

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, kind, p| {
            if kind == TensorKind::Trainable {
                p.zero_grad()
            }
        });
    }

    fn num_trainable(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, kind, p| {
            if kind == TensorKind::Trainable {
                n += p.len()
            }
        });
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
