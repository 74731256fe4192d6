//! The five learnable networks and their forward/backward passes.

use rand::Rng;

use crate::nn::{
    affine_grid_sample, affine_grid_sample_backward, global_avg_pool, global_avg_pool_backward,
    join, relu, relu_backward, sigmoid, sigmoid_backward, BatchNorm2d, BatchNormCache, Conv2d,
    Linear, Module, Param, TensorKind,
};
use crate::tensor::Tensor;

/// Stride-1 feature extractor: four 3x3 convolutions with batch norm + ReLU
/// between them, followed by a non-affine batch norm on the `2C` output.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm2d>,
    pub out_norm: BatchNorm2d,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    inputs: Vec<Tensor>,
    norm_caches: Vec<BatchNormCache>,
    activations: Vec<Tensor>,
    out_cache: BatchNormCache,
}

impl Encoder {
    pub fn new<R: Rng>(out_channels: usize, width: usize, rng: &mut R) -> Self {
        let convs = vec![
            Conv2d::same(3, width, rng),
            Conv2d::same(width, width, rng),
            Conv2d::same(width, width, rng),
            Conv2d::same(width, out_channels, rng),
        ];
        let norms = (0..3).map(|_| BatchNorm2d::new(width, true)).collect();
        Self {
            convs,
            norms,
            out_norm: BatchNorm2d::new(out_channels, false),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.convs.last().map(|c| c.out_channels).unwrap_or(0)
    }

    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h);
            if i < self.norms.len() {
                h = relu(&self.norms[i].forward_eval(&h));
            }
        }
        self.out_norm.forward_eval(&h)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> (Tensor, EncoderCache) {
        let mut inputs = Vec::with_capacity(4);
        let mut norm_caches = Vec::with_capacity(3);
        let mut activations = Vec::with_capacity(3);
        let mut h = x.clone();
        for i in 0..self.convs.len() {
            let pre = self.convs[i].forward(&h);
            inputs.push(std::mem::replace(&mut h, pre));
            if i < self.norms.len() {
                let (n, cache) = self.norms[i].forward_train(&h);
                norm_caches.push(cache);
                h = relu(&n);
                activations.push(h.clone());
            }
        }
        let (out, out_cache) = self.out_norm.forward_train(&h);
        (
            out,
            EncoderCache {
                inputs,
                norm_caches,
                activations,
                out_cache,
            },
        )
    }

    /// Accumulates parameter gradients for the whole stack.
    pub fn backward(&mut self, cache: &EncoderCache, gy: &Tensor) {
        let mut g = self.out_norm.backward(&cache.out_cache, gy);
        for i in (0..self.convs.len()).rev() {
            if i < self.norms.len() {
                g = relu_backward(&cache.activations[i], &g);
                g = self.norms[i].backward(&cache.norm_caches[i], &g);
            }
            let need = i > 0;
            match self.convs[i].backward(&cache.inputs[i], &g, need) {
                Some(gx) => g = gx,
                None => break,
            }
        }
    }
}

impl Module for Encoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), f);
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            n.visit(&join(prefix, &format!("norm{i}")), f);
        }
        self.out_norm.visit(&join(prefix, "out_norm"), f);
    }
}

/// Two strided convolutions, global pooling, and a linear map; shared by the
/// localization net (6 outputs) and the classifier (M outputs).
#[derive(Debug, Clone)]
pub struct PooledHead {
    pub conv0: Conv2d,
    pub conv1: Conv2d,
    pub fc: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    x: Tensor,
    a0: Tensor,
    a1: Tensor,
    pooled: Tensor,
}

impl PooledHead {
    pub fn new<R: Rng>(in_channels: usize, widths: (usize, usize), fc: Linear, rng: &mut R) -> Self {
        Self {
            conv0: Conv2d::new(in_channels, widths.0, 3, 2, 1, rng),
            conv1: Conv2d::new(widths.0, widths.1, 3, 2, 1, rng),
            fc,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.conv0.in_channels
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, HeadCache) {
        let a0 = relu(&self.conv0.forward(x));
        let a1 = relu(&self.conv1.forward(&a0));
        let pooled = global_avg_pool(&a1);
        let out = self.fc.forward(&pooled);
        (
            out,
            HeadCache {
                x: x.clone(),
                a0,
                a1,
                pooled,
            },
        )
    }

    pub fn backward(&mut self, cache: &HeadCache, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let (_, _, h1, w1) = cache.a1.dims4();
        let g = self.fc.backward(&cache.pooled, gy);
        let g = global_avg_pool_backward(&g, h1, w1);
        let g = relu_backward(&cache.a1, &g);
        let g = self.conv1.backward(&cache.a0, &g, true).expect("requested");
        let g = relu_backward(&cache.a0, &g);
        self.conv0.backward(&cache.x, &g, want_input_grad)
    }

    /// Backward pass that only updates the final linear layer.
    pub fn backward_fc_only(&mut self, cache: &HeadCache, gy: &Tensor) {
        self.fc.backward(&cache.pooled, gy);
    }
}

impl Module for PooledHead {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        self.conv0.visit(&join(prefix, "conv0"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.fc.visit(&join(prefix, "fc"), f);
    }
}

/// Spatial transformer: predicts a 2x3 affine map and resamples its input.
#[derive(Debug, Clone)]
pub struct Localizer {
    pub head: PooledHead,
}

#[derive(Debug, Clone)]
pub struct LocalizerCache {
    head: HeadCache,
    x: Tensor,
    theta: Tensor,
}

impl Localizer {
    pub const IDENTITY: [f32; 6] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];

    /// The final layer starts at zero weights with an identity bias.
    pub fn new<R: Rng>(in_channels: usize, width: usize, rng: &mut R) -> Self {
        let mut fc = Linear::zeros(width, 6);
        fc.bias.value.copy_from_slice(&Self::IDENTITY);
        Self {
            head: PooledHead::new(in_channels, (width, width), fc, rng),
        }
    }

    pub fn predict(&self, x: &Tensor) -> Tensor {
        self.head.forward(x).0
    }

    /// Returns `(warped, theta, cache)`.
    pub fn forward(&self, x: &Tensor) -> (Tensor, Tensor, LocalizerCache) {
        let (theta, head) = self.head.forward(x);
        let warped = affine_grid_sample(x, &theta);
        let cache = LocalizerCache {
            head,
            x: x.clone(),
            theta: theta.clone(),
        };
        (warped, theta, cache)
    }

    /// Gradient with respect to the localizer input, through both the sampled
    /// values and the predicted map.
    pub fn backward(&mut self, cache: &LocalizerCache, gy: &Tensor) -> Tensor {
        let (mut gx, gtheta) = affine_grid_sample_backward(&cache.x, &cache.theta, gy);
        let g_head = self
            .head
            .backward(&cache.head, &gtheta, true)
            .expect("requested");
        gx.add_assign(&g_head);
        gx
    }
}

impl Module for Localizer {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        self.head.visit(prefix, f);
    }
}

/// Three stride-1 convolutions ending in an RGB sigmoid.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub convs: Vec<Conv2d>,
}

#[derive(Debug, Clone)]
pub struct DecoderCache {
    inputs: Vec<Tensor>,
    out: Tensor,
}

impl Decoder {
    pub fn new<R: Rng>(in_channels: usize, width: usize, rng: &mut R) -> Self {
        Self {
            convs: vec![
                Conv2d::same(in_channels, width, rng),
                Conv2d::same(width, width, rng),
                Conv2d::same(width, 3, rng),
            ],
        }
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, DecoderCache) {
        let mut inputs = Vec::with_capacity(3);
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            let pre = conv.forward(&h);
            inputs.push(std::mem::replace(&mut h, pre));
            h = if i + 1 < self.convs.len() {
                relu(&h)
            } else {
                sigmoid(&h)
            };
        }
        (
            h.clone(),
            DecoderCache {
                inputs,
                out: h,
            },
        )
    }

    /// `gy` is the gradient with respect to the sigmoid output.
    pub fn backward(&mut self, cache: &DecoderCache, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let mut g = sigmoid_backward(&cache.out, gy);
        for i in (0..self.convs.len()).rev() {
            let need = i > 0 || want_input_grad;
            let gi = self.convs[i].backward(&cache.inputs[i], &g, need)?;
            g = if i > 0 {
                // inputs[i] is the post-ReLU activation of layer i - 1
                relu_backward(&cache.inputs[i], &gi)
            } else {
                gi
            };
        }
        Some(g)
    }
}

impl Module for Decoder {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit(&join(prefix, &format!("conv{i}")), f);
        }
    }
}

/// Classifier on C-channel mixed features.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub head: PooledHead,
}

impl Classifier {
    pub fn new<R: Rng>(in_channels: usize, widths: (usize, usize), classes: usize, rng: &mut R) -> Self {
        let fc = Self::fresh_fc(widths.1, classes, rng);
        Self {
            head: PooledHead::new(in_channels, widths, fc, rng),
        }
    }

    /// Small initial weights so the untrained classifier starts near uniform.
    pub fn fresh_fc<R: Rng>(width: usize, classes: usize, rng: &mut R) -> Linear {
        let mut fc = Linear::new(width, classes, rng);
        for w in &mut fc.weight.value {
            *w *= 0.05;
        }
        fc
    }

    pub fn classes(&self) -> usize {
        self.head.fc.out_features
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, HeadCache) {
        self.head.forward(x)
    }

    pub fn backward(&mut self, cache: &HeadCache, g_logits: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        self.head.backward(cache, g_logits, want_input_grad)
    }
}

impl Module for Classifier {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        self.head.visit(prefix, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
    }

    #[test]
    fn decoder_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut dec = Decoder::new(2, 4, &mut rng);
        let x = rand_tensor(&[2, 2, 4, 4], &mut rng);
        let (y, cache) = dec.forward(&x);
        let probe = rand_tensor(y.shape(), &mut rng);
        let gx = dec.backward(&cache, &probe, true).unwrap();
        for idx in [0, 9, 33, 60] {
            let h = 1e-2;
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let up = dot(&dec.forward(&xp).0, &probe);
            xp.data_mut()[idx] -= 2.0 * h;
            let down = dot(&dec.forward(&xp).0, &probe);
            let num = (up - down) / (2.0 * h as f64);
            assert!(rel(num, gx.data()[idx] as f64) < 2e-2, "{idx}: {num} vs {}", gx.data()[idx]);
        }
    }

    #[test]
    fn localizer_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut loc = Localizer::new(2, 3, &mut rng);
        // perturb away from the identity so the map depends on the input
        for w in &mut loc.head.fc.weight.value {
            *w = rng.random_range(-0.3..0.3);
        }
        let x = rand_tensor(&[1, 2, 6, 6], &mut rng);
        let (y, _, cache) = loc.forward(&x);
        let probe = rand_tensor(y.shape(), &mut rng);
        let gx = loc.backward(&cache, &probe);
        for idx in [1, 14, 40, 70] {
            let h = 1e-2;
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let up = dot(&loc.forward(&xp).0, &probe);
            xp.data_mut()[idx] -= 2.0 * h;
            let down = dot(&loc.forward(&xp).0, &probe);
            let num = (up - down) / (2.0 * h as f64);
            assert!(rel(num, gx.data()[idx] as f64) < 5e-2, "{idx}: {num} vs {}", gx.data()[idx]);
        }
    }

    #[test]
    fn localizer_starts_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let loc = Localizer::new(4, 8, &mut rng);
        let x = rand_tensor(&[3, 4, 8, 8], &mut rng);
        let theta = loc.predict(&x);
        for n in 0..3 {
            assert_eq!(theta.item(n), &Localizer::IDENTITY);
        }
    }

    #[test]
    fn encoder_parameter_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut enc = Encoder::new(4, 3, &mut rng);
        let x = rand_tensor(&[3, 3, 4, 4], &mut rng);
        let (y, cache) = enc.clone().forward_train(&x);
        let probe = rand_tensor(y.shape(), &mut rng);
        enc.backward(&cache, &probe);
        let analytic = enc.convs[1].weight.grad[5] as f64;
        let base = enc.convs[1].weight.value[5];
        let eval = |v: f32| {
            let mut e = enc.clone();
            e.convs[1].weight.value[5] = v;
            dot(&e.forward_train(&x).0, &probe)
        };
        let h = 1e-2;
        let num = (eval(base + h) - eval(base - h)) / (2.0 * h as f64);
        assert!(rel(num, analytic) < 3e-2, "{num} vs {analytic}");
    }
}
