use rand::Rng;

use super::{join, Module, Param, TensorKind};
use crate::tensor::{gemm, Tensor};

/// Fully connected layer on `[N, in]` inputs.
#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng>(in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_features as f32).sqrt();
        Self {
            in_features,
            out_features,
            weight: Param::uniform(&[out_features, in_features], bound, rng),
            bias: Param::zeros(&[out_features]),
        }
    }

    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::zeros(&[out_features, in_features]),
            bias: Param::zeros(&[out_features]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        assert_eq!(x.item_len(), self.in_features, "linear input width");
        let mut y = Tensor::zeros(&[n, self.out_features]);
        for i in 0..n {
            y.item_mut(i).copy_from_slice(&self.bias.value);
        }
        gemm(
            n,
            self.in_features,
            self.out_features,
            1.0,
            x.data(),
            false,
            &self.weight.value,
            true,
            1.0,
            y.data_mut(),
        );
        y
    }

    pub fn backward(&mut self, x: &Tensor, gy: &Tensor) -> Tensor {
        let n = x.batch();
        let (i, o) = (self.in_features, self.out_features);
        gemm(o, n, i, 1.0, gy.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for r in 0..n {
            for (b, g) in self.bias.grad.iter_mut().zip(gy.item(r)) {
                *b += g;
            }
        }
        let mut gx = Tensor::zeros(&[n, i]);
        gemm(n, o, i, 1.0, gy.data(), false, &self.weight.value, false, 0.0, gx.data_mut());
        gx.reshape(x.shape()).expect("same element count")
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        f(&join(prefix, "weight"), TensorKind::Trainable, &mut self.weight);
        f(&join(prefix, "bias"), TensorKind::Trainable, &mut self.bias);
    }
}
