use rand::Rng;

use super::{join, Module, Param, TensorKind};
use crate::tensor::{gemm, Tensor};

/// 2-D convolution with square kernels, implemented as im2col + GEMM.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in * k * k]`
    pub weight: Param,
    pub bias: Param,
}

impl Conv2d {
    /// Kaiming-uniform weights, zero bias.
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let bound = (6.0 / fan_in).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::uniform(&[out_channels, in_channels * kernel * kernel], bound, rng),
            bias: Param::zeros(&[out_channels]),
        }
    }

    /// Stride-1 convolution that keeps the spatial size.
    pub fn same<R: Rng>(in_channels: usize, out_channels: usize, rng: &mut R) -> Self {
        Self::new(in_channels, out_channels, 3, 1, 1, rng)
    }

    pub fn out_size(&self, size: usize) -> usize {
        (size + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn im2col(&self, x: &[f32], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for c in 0..self.in_channels {
            let src = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(0.0);
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let ix = ox as isize * s - p + kx as isize;
                            *v = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src_row[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, oh: usize, ow: usize, gx: &mut [f32]) {
        let k = self.kernel;
        let (s, p) = (self.stride as isize, self.padding as isize);
        let plane = oh * ow;
        for c in 0..self.in_channels {
            let dst = &mut gx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for oy in 0..oh {
                        let iy = oy as isize * s - p + ky as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = ox as isize * s - p + kx as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[iy as usize * w + ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = (self.out_size(h), self.out_size(w));
        let kk = self.in_channels * self.kernel * self.kernel;
        let mut cols = vec![0.0; kk * oh * ow];
        let mut out = Tensor::zeros(&[n, self.out_channels, oh, ow]);
        for i in 0..n {
            self.im2col(x.item(i), h, w, oh, ow, &mut cols);
            let y = out.item_mut(i);
            for (oc, plane) in y.chunks_mut(oh * ow).enumerate() {
                plane.fill(self.bias.value[oc]);
            }
            gemm(
                self.out_channels,
                kk,
                oh * ow,
                1.0,
                &self.weight.value,
                false,
                &cols,
                false,
                1.0,
                y,
            );
        }
        out
    }

    /// Accumulates weight/bias gradients; returns the input gradient when
    /// `want_input_grad` is set.
    pub fn backward(&mut self, x: &Tensor, gy: &Tensor, want_input_grad: bool) -> Option<Tensor> {
        let (n, _, h, w) = x.dims4();
        let (_, oc, oh, ow) = gy.dims4();
        let kk = self.in_channels * self.kernel * self.kernel;
        let plane = oh * ow;
        let mut cols = vec![0.0; kk * plane];
        let mut gcols = vec![0.0; kk * plane];
        let mut gx = want_input_grad.then(|| Tensor::zeros(x.shape()));
        for i in 0..n {
            let g = gy.item(i);
            self.im2col(x.item(i), h, w, oh, ow, &mut cols);
            gemm(oc, plane, kk, 1.0, g, false, &cols, true, 1.0, &mut self.weight.grad);
            for (o, gp) in g.chunks(plane).enumerate() {
                self.bias.grad[o] += gp.iter().sum::<f32>();
            }
            if let Some(gx) = gx.as_mut() {
                gemm(kk, oc, plane, 1.0, &self.weight.value, true, g, false, 0.0, &mut gcols);
                self.col2im(&gcols, h, w, oh, ow, gx.item_mut(i));
            }
        }
        gx
    }
}

impl Module for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        f(&join(prefix, "weight"), TensorKind::Trainable, &mut self.weight);
        f(&join(prefix, "bias"), TensorKind::Trainable, &mut self.bias);
    }
}
