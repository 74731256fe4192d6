//! Image-space transforms shared by template processing, the synthetic
//! renderer and the standard-augmentation baseline.

use super::Image;

/// Similarity-plus-shear warp about the image center. Translations are
/// fractions of the image size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Warp {
    pub rotation_deg: f32,
    pub scale_x: f32,
    pub scale_y: f32,
    pub shear: f32,
    pub tx: f32,
    pub ty: f32,
}

impl Warp {
    pub const IDENTITY: Warp = Warp {
        rotation_deg: 0.0,
        scale_x: 1.0,
        scale_y: 1.0,
        shear: 0.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn similarity(rotation_deg: f32, scale: f32, tx: f32, ty: f32) -> Self {
        Warp {
            rotation_deg,
            scale_x: scale,
            scale_y: scale,
            shear: 0.0,
            tx,
            ty,
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Maps output coordinates `(u, v)` (centered, in units of the half
    /// size) back to source coordinates.
    pub fn inverse(&self, u: f32, v: f32) -> (f32, f32) {
        let (u, v) = (u - 2.0 * self.tx, v - 2.0 * self.ty);
        let (s, c) = (-self.rotation_deg.to_radians()).sin_cos();
        let (ru, rv) = (c * u - s * v, s * u + c * v);
        let ru = ru - self.shear * rv;
        (ru / self.scale_x, rv / self.scale_y)
    }
}

fn sample_clamped(img: &Image, c: usize, fy: f32, fx: f32) -> f32 {
    let fy = fy.clamp(0.0, (img.height() - 1) as f32);
    let fx = fx.clamp(0.0, (img.width() - 1) as f32);
    let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(img.height() - 1), (x0 + 1).min(img.width() - 1));
    let (ty, tx) = (fy - y0 as f32, fx - x0 as f32);
    let top = img.get(c, y0, x0) * (1.0 - tx) + img.get(c, y0, x1) * tx;
    let bot = img.get(c, y1, x0) * (1.0 - tx) + img.get(c, y1, x1) * tx;
    top * (1.0 - ty) + bot * ty
}

/// Bilinear warp with edge replication outside the source.
pub fn warp(img: &Image, w: &Warp) -> Image {
    if w.is_identity() {
        return img.clone();
    }
    let (width, height) = (img.width(), img.height());
    let (hw, hh) = (width as f32 / 2.0, height as f32 / 2.0);
    let mut out = Image::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let u = (x as f32 + 0.5 - hw) / hw;
            let v = (y as f32 + 0.5 - hh) / hh;
            let (su, sv) = w.inverse(u, v);
            let fx = su * hw + hw - 0.5;
            let fy = sv * hh + hh - 0.5;
            for c in 0..3 {
                out.set(c, y, x, sample_clamped(img, c, fy, fx));
            }
        }
    }
    out
}

/// Enhancement factors; 1 leaves the image unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Enhance {
    pub brightness: f32,
    pub color: f32,
    pub contrast: f32,
    pub sharpness: f32,
}

impl Enhance {
    pub const IDENTITY: Enhance = Enhance {
        brightness: 1.0,
        color: 1.0,
        contrast: 1.0,
        sharpness: 1.0,
    };
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn blend(img: &mut Image, base: &Image, factor: f32) {
    for (v, b) in img.data_mut().iter_mut().zip(base.data()) {
        *v = (b + factor * (*v - b)).clamp(0.0, 1.0);
    }
}

/// Brightness, color, contrast and sharpness, each blending towards a
/// degenerate version of the image.
pub fn enhance(img: &Image, e: &Enhance) -> Image {
    let mut out = img.clone();
    let (w, h) = (img.width(), img.height());
    if e.brightness != 1.0 {
        let black = Image::filled(w, h, [0.0; 3]);
        blend(&mut out, &black, e.brightness);
    }
    if e.color != 1.0 {
        let mut gray = out.clone();
        for y in 0..h {
            for x in 0..w {
                let l = luma(out.pixel(y, x));
                gray.set_pixel(y, x, [l; 3]);
            }
        }
        blend(&mut out, &gray, e.color);
    }
    if e.contrast != 1.0 {
        let mut mean = 0.0;
        for y in 0..h {
            for x in 0..w {
                mean += luma(out.pixel(y, x));
            }
        }
        mean /= (w * h) as f32;
        blend(&mut out, &Image::filled(w, h, [mean; 3]), e.contrast);
    }
    if e.sharpness != 1.0 {
        // smoothing kernel [1 1 1; 1 5 1; 1 1 1] / 13, borders left as is
        let mut smooth = out.clone();
        for c in 0..3 {
            for y in 1..h.saturating_sub(1) {
                for x in 1..w.saturating_sub(1) {
                    let mut acc = 4.0 * out.get(c, y, x);
                    for dy in 0..3 {
                        for dx in 0..3 {
                            acc += out.get(c, y + dy - 1, x + dx - 1);
                        }
                    }
                    smooth.set(c, y, x, acc / 13.0);
                }
            }
        }
        blend(&mut out, &smooth, e.sharpness);
    }
    out
}

/// Separable Gaussian blur with standard deviation `sigma` pixels.
pub fn gaussian_blur(img: &Image, sigma: f32) -> Image {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f32 = kernel.iter().sum();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let pass = |src: &Image, horizontal: bool| {
        let mut dst = src.clone();
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, wt) in kernel.iter().enumerate() {
                        let o = k as isize - radius;
                        let (sy, sx) = if horizontal {
                            (y, (x + o).clamp(0, w - 1))
                        } else {
                            ((y + o).clamp(0, h - 1), x)
                        };
                        acc += wt * src.get(c, sy as usize, sx as usize);
                    }
                    dst.set(c, y as usize, x as usize, acc / norm);
                }
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = img.clone();
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            out.set_pixel(y, x, img.pixel(y, w - 1 - x));
        }
    }
    out
}

pub fn flip_vertical(img: &Image) -> Image {
    let mut out = img.clone();
    let h = img.height();
    for y in 0..h {
        for x in 0..img.width() {
            out.set_pixel(y, x, img.pixel(h - 1 - y, x));
        }
    }
    out
}

/// Crops a window of `fraction` times the size whose center sits at
/// `(cx, cy)` in `[0, 1]` of the free range, then resizes back.
pub fn crop_resize(img: &Image, fraction: f32, cx: f32, cy: f32) -> Image {
    if fraction >= 1.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let cw = ((w as f32 * fraction).round() as usize).clamp(1, w);
    let ch = ((h as f32 * fraction).round() as usize).clamp(1, h);
    let x0 = ((w - cw) as f32 * cx.clamp(0.0, 1.0)).round() as usize;
    let y0 = ((h - ch) as f32 * cy.clamp(0.0, 1.0)).round() as usize;
    let mut crop = Image::filled(cw, ch, [0.0; 3]);
    for y in 0..ch {
        for x in 0..cw {
            crop.set_pixel(y, x, img.pixel(y0 + y, x0 + x));
        }
    }
    crop.resize(w, h)
}
