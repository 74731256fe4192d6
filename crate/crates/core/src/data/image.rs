use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// RGB image with `f32` samples, planar (channel-major) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub const CHANNELS: usize = 3;

    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != Self::CHANNELS * width * height {
            return Err(Error::Shape(format!(
                "{width}x{height} RGB image needs {} samples, got {}",
                Self::CHANNELS * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in rgb {
            data.extend(std::iter::repeat_n(c, width * height));
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.get(0, y, x), self.get(1, y, x), self.get(2, y, x)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            self.set(c, y, x, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Mean absolute per-sample difference.
    pub fn mean_abs_diff(&self, other: &Image) -> f32 {
        let n = self.data.len().max(1) as f32;
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / n
    }

    /// Batches images into an NCHW tensor.
    pub fn batch<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor> {
        let items: Vec<&Image> = images.into_iter().collect();
        let Some(first) = items.first() else {
            return Err(Error::Empty("image batch".into()));
        };
        let shape = [3, first.height, first.width];
        Tensor::stack(&shape, items.iter().map(|im| im.data.as_slice()))
    }

    pub fn from_tensor_item(t: &Tensor, n: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        assert_eq!(c, 3);
        Self {
            width: w,
            height: h,
            data: t.item(n).to_vec(),
        }
    }

    /// Bilinear resize to `width x height` (pixel-center aligned).
    pub fn resize(&self, width: usize, height: usize) -> Image {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let mut out = Image::filled(width, height, [0.0; 3]);
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        for y in 0..height {
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f32);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f32;
            for x in 0..width {
                let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f32);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f32;
                for c in 0..3 {
                    let top = self.get(c, y0, x0) * (1.0 - tx) + self.get(c, y0, x1) * tx;
                    let bot = self.get(c, y1, x0) * (1.0 - tx) + self.get(c, y1, x1) * tx;
                    out.set(c, y, x, top * (1.0 - ty) + bot * ty);
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
        })
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let mut out = Image::filled(w, h, [0.0; 3]);
        for (x, y, p) in img.enumerate_pixels() {
            out.set_pixel(y as usize, x as usize, p.0.map(|v| v as f32 / 255.0));
        }
        out
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }

    /// Loads any supported image file as RGB in `[0, 1]`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?.to_rgb8();
        Ok(Self::from_rgb8(&img))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_at_8_bits() {
        let mut img = Image::filled(4, 3, [0.0, 0.5, 1.0]);
        img.set_pixel(1, 2, [1.0, 0.0, 0.2]);
        let quantized = Image::from_rgb8(&img.to_rgb8());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        quantized.save_png(&path).unwrap();
        assert_eq!(Image::load(&path).unwrap(), quantized);
    }

    #[test]
    fn resize_to_same_size_is_identity() {
        let img = Image::new(2, 2, (0..12).map(|v| v as f32 / 12.0).collect()).unwrap();
        assert_eq!(img.resize(2, 2), img);
        let big = img.resize(4, 4);
        assert_eq!((big.width(), big.height()), (4, 4));
    }
}
