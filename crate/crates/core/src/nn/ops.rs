use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

/// Gradient of ReLU given its output.
pub fn relu_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, o) in gx.data_mut().iter_mut().zip(y.data()) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
    gx
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = 1.0 / (1.0 + (-*v).exp());
    }
    y
}

/// Gradient of the logistic function given its output.
pub fn sigmoid_backward(y: &Tensor, gy: &Tensor) -> Tensor {
    let mut gx = gy.clone();
    for (g, o) in gx.data_mut().iter_mut().zip(y.data()) {
        *g *= o * (1.0 - o);
    }
    gx
}

/// `[N, C, H, W] -> [N, C]`
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut y = Tensor::zeros(&[n, c]);
    for i in 0..n {
        let src = x.item(i);
        for (ch, out) in y.item_mut(i).iter_mut().enumerate() {
            *out = src[ch * plane..(ch + 1) * plane].iter().sum::<f32>() / plane as f32;
        }
    }
    y
}

pub fn global_avg_pool_backward(gy: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c) = (gy.shape()[0], gy.shape()[1]);
    let plane = h * w;
    let mut gx = Tensor::zeros(&[n, c, h, w]);
    for i in 0..n {
        let g = gy.item(i).to_vec();
        let dst = gx.item_mut(i);
        for (ch, gv) in g.iter().enumerate() {
            dst[ch * plane..(ch + 1) * plane].fill(gv / plane as f32);
        }
    }
    gx
}
