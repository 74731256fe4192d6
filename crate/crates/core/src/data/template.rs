//! Randomized template variants: geometry, enhancement, then blur.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ops::{enhance, gaussian_blur, warp, Enhance, Warp};
use super::Image;

/// Sampling ranges for template processing. Ranges are `[lo, hi]`;
/// symmetric ones are given by their half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateAug {
    pub rotation_deg: f32,
    pub scale: (f32, f32),
    /// Fraction of the image size.
    pub translation: f32,
    pub brightness: (f32, f32),
    pub color: (f32, f32),
    pub contrast: (f32, f32),
    pub sharpness: (f32, f32),
    pub blur_sigma: (f32, f32),
}

impl Default for TemplateAug {
    fn default() -> Self {
        Self {
            rotation_deg: 15.0,
            scale: (0.8, 1.2),
            translation: 0.1,
            brightness: (0.7, 1.3),
            color: (0.7, 1.3),
            contrast: (0.7, 1.3),
            sharpness: (0.7, 1.3),
            blur_sigma: (0.0, 1.5),
        }
    }
}

impl TemplateAug {
    /// Every range collapsed to its neutral value.
    pub fn identity() -> Self {
        Self {
            rotation_deg: 0.0,
            scale: (1.0, 1.0),
            translation: 0.0,
            brightness: (1.0, 1.0),
            color: (1.0, 1.0),
            contrast: (1.0, 1.0),
            sharpness: (1.0, 1.0),
            blur_sigma: (0.0, 0.0),
        }
    }

    /// Clamps to ranges the transforms handle gracefully.
    pub fn sanitized(&self) -> Self {
        let ordered = |(a, b): (f32, f32), lo: f32, hi: f32| {
            let (a, b) = (a.clamp(lo, hi), b.clamp(lo, hi));
            (a.min(b), a.max(b))
        };
        Self {
            rotation_deg: self.rotation_deg.abs().min(180.0),
            scale: ordered(self.scale, 0.1, 4.0),
            translation: self.translation.abs().min(0.5),
            brightness: ordered(self.brightness, 0.0, 4.0),
            color: ordered(self.color, 0.0, 4.0),
            contrast: ordered(self.contrast, 0.0, 4.0),
            sharpness: ordered(self.sharpness, 0.0, 4.0),
            blur_sigma: ordered(self.blur_sigma, 0.0, 5.0),
        }
    }
}

pub(crate) fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f32, f32)) -> f32 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

pub(crate) fn symmetric<R: Rng>(rng: &mut R, half: f32) -> f32 {
    uniform(rng, (-half, half))
}

pub fn process_template(template: &Image, seed: u64) -> Image {
    process_template_with(template, &TemplateAug::default(), seed)
}

pub fn process_template_with(template: &Image, aug: &TemplateAug, seed: u64) -> Image {
    let aug = aug.sanitized();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = Warp::similarity(
        symmetric(&mut rng, aug.rotation_deg),
        uniform(&mut rng, aug.scale),
        symmetric(&mut rng, aug.translation),
        symmetric(&mut rng, aug.translation),
    );
    let e = Enhance {
        brightness: uniform(&mut rng, aug.brightness),
        color: uniform(&mut rng, aug.color),
        contrast: uniform(&mut rng, aug.contrast),
        sharpness: uniform(&mut rng, aug.sharpness),
    };
    let sigma = uniform(&mut rng, aug.blur_sigma);
    let mut out = gaussian_blur(&enhance(&warp(template, &geo), &e), sigma);
    out.clamp_unit();
    out
}
