use super::{join, Module, Param, TensorKind};
use crate::tensor::Tensor;

const EPS: f32 = 1e-5;

/// Per-channel batch normalization over `(N, H, W)`.
///
/// Without `affine` the layer only standardizes, which bounds the output
/// energy per channel.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub affine: bool,
    pub momentum: f32,
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

/// Values kept from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize, affine: bool) -> Self {
        Self {
            channels,
            affine,
            momentum: 0.1,
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::zeros(&[channels]),
            running_mean: Param::zeros(&[channels]),
            running_var: Param::filled(&[channels], 1.0),
        }
    }

    fn apply(&self, x: &Tensor, mean: &[f32], inv_std: &[f32]) -> (Tensor, Tensor) {
        let (n, c, h, w) = x.dims4();
        let plane = h * w;
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * plane;
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for k in off..off + plane {
                    let xh = (x.data()[k] - mean[ch]) * inv_std[ch];
                    xhat.data_mut()[k] = xh;
                    y.data_mut()[k] = g * xh + b;
                }
            }
        }
        (y, xhat)
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, BatchNormCache) {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "batch-norm channels");
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut mean = vec![0.0f32; c];
        let mut var = vec![0.0f32; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                s += x.data()[off..off + plane].iter().map(|v| *v as f64).sum::<f64>();
            }
            let m = s / count;
            let mut sq = 0.0f64;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                sq += x.data()[off..off + plane]
                    .iter()
                    .map(|v| (*v as f64 - m).powi(2))
                    .sum::<f64>();
            }
            mean[ch] = m as f32;
            var[ch] = (sq / count) as f32;
        }
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + EPS).sqrt()).collect();
        let (y, xhat) = self.apply(x, &mean, &inv_std);

        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 } as f32;
        let mom = self.momentum;
        for ch in 0..c {
            let rm = &mut self.running_mean.value[ch];
            *rm = (1.0 - mom) * *rm + mom * mean[ch];
            let rv = &mut self.running_var.value[ch];
            *rv = (1.0 - mom) * *rv + mom * var[ch] * unbias;
        }
        (y, BatchNormCache { xhat, inv_std })
    }

    /// Normalizes with the running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let inv_std: Vec<f32> = self
            .running_var
            .value
            .iter()
            .map(|v| 1.0 / (v + EPS).sqrt())
            .collect();
        self.apply(x, &self.running_mean.value, &inv_std).0
    }

    pub fn backward(&mut self, cache: &BatchNormCache, gy: &Tensor) -> Tensor {
        let (n, c, h, w) = gy.dims4();
        let plane = h * w;
        let count = (n * plane) as f32;
        let mut gx = Tensor::zeros(gy.shape());
        for ch in 0..c {
            let g = self.gamma.value[ch];
            let mut sum_gy = 0.0f64;
            let mut sum_gy_xhat = 0.0f64;
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for k in off..off + plane {
                    sum_gy += gy.data()[k] as f64;
                    sum_gy_xhat += (gy.data()[k] * cache.xhat.data()[k]) as f64;
                }
            }
            if self.affine {
                self.gamma.grad[ch] += sum_gy_xhat as f32;
                self.beta.grad[ch] += sum_gy as f32;
            }
            let scale = g * cache.inv_std[ch] / count;
            let (sg, sgx) = (sum_gy as f32, sum_gy_xhat as f32);
            for i in 0..n {
                let off = (i * c + ch) * plane;
                for k in off..off + plane {
                    gx.data_mut()[k] =
                        scale * (count * gy.data()[k] - sg - cache.xhat.data()[k] * sgx);
                }
            }
        }
        gx
    }
}

impl Module for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        if self.affine {
            f(&join(prefix, "gamma"), TensorKind::Trainable, &mut self.gamma);
            f(&join(prefix, "beta"), TensorKind::Trainable, &mut self.beta);
        }
        f(&join(prefix, "running_mean"), TensorKind::Buffer, &mut self.running_mean);
        f(&join(prefix, "running_var"), TensorKind::Buffer, &mut self.running_var);
    }
}
