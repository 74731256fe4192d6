//! Affine grid generation fused with bilinear sampling.
//!
//! Conventions: normalized coordinates span `[-1, 1]` with `-1`/`1` at the
//! centers of the first/last pixel; samples outside the source read zero.
//! The 2x3 map (row-major `a11 a12 tx a21 a22 ty`) takes output coordinates
//! to source coordinates.

use crate::tensor::Tensor;

#[inline]
fn norm_coord(i: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (size - 1) as f64
    }
}

#[inline]
fn to_pixel(c: f64, size: usize) -> f64 {
    (c + 1.0) * (size.max(1) - 1) as f64 / 2.0
}

struct Tap {
    x0: isize,
    y0: isize,
    fx: f64,
    fy: f64,
    xt: f64,
    yt: f64,
}

fn coeffs(theta: &[f32]) -> [f64; 6] {
    std::array::from_fn(|k| theta[k] as f64)
}

fn tap(t: &[f64; 6], i: usize, j: usize, h: usize, w: usize) -> Tap {
    let xt = norm_coord(j, w);
    let yt = norm_coord(i, h);
    let xs = t[0] * xt + t[1] * yt + t[2];
    let ys = t[3] * xt + t[4] * yt + t[5];
    let px = to_pixel(xs, w);
    let py = to_pixel(ys, h);
    let x0 = px.floor();
    let y0 = py.floor();
    Tap {
        x0: x0 as isize,
        y0: y0 as isize,
        fx: px - x0,
        fy: py - y0,
        xt,
        yt,
    }
}

#[inline]
fn read(plane: &[f32], h: usize, w: usize, y: isize, x: isize) -> f64 {
    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
        0.0
    } else {
        plane[y as usize * w + x as usize] as f64
    }
}

/// Warps every item of `x` (`[N, C, H, W]`) by its own 2x3 map from
/// `theta` (`[N, 6]`).
pub fn affine_grid_sample(x: &Tensor, theta: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    assert_eq!(theta.shape(), &[n, 6], "theta must be [N, 6]");
    let plane = h * w;
    let mut y = Tensor::zeros(x.shape());
    for b in 0..n {
        let th = coeffs(theta.item(b));
        let src = x.item(b);
        let taps: Vec<Tap> = (0..h)
            .flat_map(|i| (0..w).map(move |j| (i, j)))
            .map(|(i, j)| tap(&th, i, j, h, w))
            .collect();
        let dst = y.item_mut(b);
        for ch in 0..c {
            let sp = &src[ch * plane..(ch + 1) * plane];
            for (p, t) in taps.iter().enumerate() {
                let v00 = read(sp, h, w, t.y0, t.x0);
                let v01 = read(sp, h, w, t.y0, t.x0 + 1);
                let v10 = read(sp, h, w, t.y0 + 1, t.x0);
                let v11 = read(sp, h, w, t.y0 + 1, t.x0 + 1);
                let top = v00 * (1.0 - t.fx) + v01 * t.fx;
                let bot = v10 * (1.0 - t.fx) + v11 * t.fx;
                dst[ch * plane + p] = (top * (1.0 - t.fy) + bot * t.fy) as f32;
            }
        }
    }
    y
}

/// Returns `(grad_x, grad_theta)`.
pub fn affine_grid_sample_backward(x: &Tensor, theta: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4();
    let plane = h * w;
    let mut gx = Tensor::zeros(x.shape());
    let mut gtheta = Tensor::zeros(&[n, 6]);
    let sx = (w.max(1) - 1) as f64 / 2.0;
    let sy = (h.max(1) - 1) as f64 / 2.0;
    for b in 0..n {
        let th = coeffs(theta.item(b));
        let src = x.item(b);
        let g = gy.item(b);
        let mut gt = [0.0f64; 6];
        let gsrc = gx.item_mut(b);
        for i in 0..h {
            for j in 0..w {
                let t = tap(&th, i, j, h, w);
                let p = i * w + j;
                let mut gpx = 0.0f64;
                let mut gpy = 0.0f64;
                let corners = [
                    (t.y0, t.x0, (1.0 - t.fy) * (1.0 - t.fx)),
                    (t.y0, t.x0 + 1, (1.0 - t.fy) * t.fx),
                    (t.y0 + 1, t.x0, t.fy * (1.0 - t.fx)),
                    (t.y0 + 1, t.x0 + 1, t.fy * t.fx),
                ];
                for ch in 0..c {
                    let gv = g[ch * plane + p] as f64;
                    if gv == 0.0 {
                        continue;
                    }
                    let sp = &src[ch * plane..(ch + 1) * plane];
                    let v00 = read(sp, h, w, t.y0, t.x0);
                    let v01 = read(sp, h, w, t.y0, t.x0 + 1);
                    let v10 = read(sp, h, w, t.y0 + 1, t.x0);
                    let v11 = read(sp, h, w, t.y0 + 1, t.x0 + 1);
                    gpx += gv * ((v01 - v00) * (1.0 - t.fy) + (v11 - v10) * t.fy);
                    gpy += gv * ((v10 - v00) * (1.0 - t.fx) + (v11 - v01) * t.fx);
                    for &(yy, xx, wt) in &corners {
                        if yy >= 0 && xx >= 0 && yy < h as isize && xx < w as isize {
                            gsrc[ch * plane + yy as usize * w + xx as usize] += (gv * wt) as f32;
                        }
                    }
                }
                let gxs = gpx * sx;
                let gys = gpy * sy;
                gt[0] += gxs * t.xt;
                gt[1] += gxs * t.yt;
                gt[2] += gxs;
                gt[3] += gys * t.xt;
                gt[4] += gys * t.yt;
                gt[5] += gys;
            }
        }
        for (dst, v) in gtheta.item_mut(b).iter_mut().zip(gt) {
            *dst = v as f32;
        }
    }
    (gx, gtheta)
}
