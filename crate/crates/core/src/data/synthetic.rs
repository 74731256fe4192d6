//! Procedural sign-like glyphs photographed under random deformation,
//! clutter and lighting.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Photo, Protocol};
use super::ops::Warp;
use super::template::{symmetric, uniform};
use super::Image;
use crate::error::{Error, Result};

const SHAPES: [&str; 6] = ["circle", "triangle", "invtriangle", "square", "diamond", "octagon"];
const SYMBOLS: [&str; 8] = ["blank", "hbar", "vbar", "left", "right", "up", "cross", "dot"];

const RED: [f32; 3] = [0.85, 0.1, 0.1];
const WHITE: [f32; 3] = [0.95, 0.95, 0.95];
const BLACK: [f32; 3] = [0.08, 0.08, 0.08];
const BLUE: [f32; 3] = [0.1, 0.25, 0.8];
const YELLOW: [f32; 3] = [0.95, 0.8, 0.1];

/// (name, rim, fill, symbol)
const PALETTES: [(&str, [f32; 3], [f32; 3], [f32; 3]); 4] = [
    ("redrim", RED, WHITE, BLACK),
    ("blue", WHITE, BLUE, WHITE),
    ("yellow", BLACK, YELLOW, BLACK),
    ("redfill", WHITE, RED, WHITE),
];

const TEMPLATE_BACKGROUND: [f32; 3] = [0.55, 0.55, 0.55];
const GLYPH_RADIUS: f32 = 0.85;
const RIM: f32 = 0.78;

/// Number of distinct glyph classes the renderer can produce.
pub const GLYPH_INVENTORY: usize = SHAPES.len() * SYMBOLS.len() * PALETTES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Glyph {
    pub shape: usize,
    pub symbol: usize,
    pub palette: usize,
}

impl Glyph {
    pub fn from_index(i: usize) -> Self {
        Self {
            shape: i % SHAPES.len(),
            symbol: (i / SHAPES.len()) % SYMBOLS.len(),
            palette: i / (SHAPES.len() * SYMBOLS.len()),
        }
    }

    pub fn name(&self) -> String {
        format!(
            "{}-{}-{}",
            SHAPES[self.shape], SYMBOLS[self.symbol], PALETTES[self.palette].0
        )
    }

    /// Normalized outline gauge: `<= 1` inside the outer shape.
    fn gauge(&self, u: f32, v: f32) -> f32 {
        let r = GLYPH_RADIUS;
        let tri = |sign: f32| {
            let normals = [(0.0, 1.0), (-0.866, -0.5), (0.866, -0.5)];
            normals
                .iter()
                .map(|(a, b)| sign * (a * u + b * v))
                .fold(f32::NEG_INFINITY, f32::max)
                / (0.5 * r)
        };
        match self.shape {
            0 => u.hypot(v) / r,
            1 => tri(1.0),
            2 => tri(-1.0),
            3 => u.abs().max(v.abs()) / (0.8 * r),
            4 => (u.abs() + v.abs()) / r,
            _ => u
                .abs()
                .max(v.abs())
                .max((u.abs() + v.abs()) / std::f32::consts::SQRT_2)
                / (0.9 * r),
        }
    }

    fn symbol_hit(&self, u: f32, v: f32) -> bool {
        let s = match self.shape {
            1 | 2 => 0.28,
            _ => 0.42,
        };
        let dv = match self.shape {
            1 => 0.12,
            2 => -0.12,
            _ => 0.0,
        };
        let (x, y) = (u / s, (v - dv) / s);
        let inside = x.abs() < 0.9 && y.abs() < 0.9;
        let arrow = |x: f32, y: f32| {
            (y.abs() < 0.2 && x > -0.9 && x < 0.15)
                || (x >= 0.1 && x < 0.9 && y.abs() < 0.85 * (0.9 - x))
        };
        match self.symbol {
            0 => false,
            1 => y.abs() < 0.25 && x.abs() < 0.9,
            2 => x.abs() < 0.25 && y.abs() < 0.9,
            3 => arrow(-x, y),
            4 => arrow(x, y),
            5 => arrow(-y, x),
            6 => inside && ((x - y).abs() < 0.3 || (x + y).abs() < 0.3),
            _ => x.hypot(y) < 0.5,
        }
    }

    /// Color at glyph coordinates, or `None` off the glyph.
    pub fn color_at(&self, u: f32, v: f32) -> Option<[f32; 3]> {
        let g = self.gauge(u, v);
        let (_, rim, fill, sym) = PALETTES[self.palette];
        if g > 1.0 {
            None
        } else if g > RIM {
            Some(rim)
        } else if self.symbol_hit(u, v) {
            Some(sym)
        } else {
            Some(fill)
        }
    }
}

const SUPERSAMPLE: usize = 4;

fn render(size: usize, warp: &Warp, mut background: impl FnMut(f32, f32) -> [f32; 3], glyph: &Glyph) -> Image {
    let mut img = Image::filled(size, size, [0.0; 3]);
    let half = size as f32 / 2.0;
    let n = (SUPERSAMPLE * SUPERSAMPLE) as f32;
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0f32; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let px = x as f32 + (sx as f32 + 0.5) / SUPERSAMPLE as f32;
                    let py = y as f32 + (sy as f32 + 0.5) / SUPERSAMPLE as f32;
                    let (u, v) = ((px - half) / half, (py - half) / half);
                    let (gu, gv) = warp.inverse(u, v);
                    let c = glyph.color_at(gu, gv).unwrap_or_else(|| background(u, v));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            img.set_pixel(y, x, acc.map(|a| a / n));
        }
    }
    img
}

/// Canonical rendering of a glyph on the flat template background.
pub fn render_template(glyph: &Glyph, size: usize) -> Image {
    render(size, &Warp::IDENTITY, |_, _| TEMPLATE_BACKGROUND, glyph)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlluminationKnobs {
    pub gradient_strength: (f32, f32),
    pub spot_count: (usize, usize),
    pub spot_intensity: (f32, f32),
    pub shadow_count: (usize, usize),
    pub shadow_opacity: (f32, f32),
    pub gamma: (f32, f32),
}

impl Default for IlluminationKnobs {
    fn default() -> Self {
        Self {
            gradient_strength: (0.2, 0.8),
            spot_count: (0, 2),
            spot_intensity: (0.3, 0.8),
            shadow_count: (0, 2),
            shadow_opacity: (0.3, 0.7),
            gamma: (0.5, 2.0),
        }
    }
}

impl IlluminationKnobs {
    /// No lighting effects at all.
    pub fn off() -> Self {
        Self {
            gradient_strength: (0.0, 0.0),
            spot_count: (0, 0),
            spot_intensity: (0.0, 0.0),
            shadow_count: (0, 0),
            shadow_opacity: (0.0, 0.0),
            gamma: (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformKnobs {
    pub rotation_deg: f32,
    pub scale: (f32, f32),
    pub translation: f32,
}

impl Default for DeformKnobs {
    fn default() -> Self {
        Self {
            rotation_deg: 5.0,
            scale: (0.9, 1.0),
            translation: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Disjoint train/test classes, test classes seen only via templates.
    pub one_shot: bool,
    /// Classes held out for testing in one-shot mode.
    pub test_classes: usize,
    /// Per-class test share in the traditional protocol.
    pub test_fraction: f32,
    pub background_noise: f32,
    /// Blend between the flat template background (0) and a random
    /// striped one (1).
    pub clutter: f32,
    pub illumination: IlluminationKnobs,
    pub deformation: DeformKnobs,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 30,
            samples_per_class: 20,
            image_size: 32,
            seed: 0,
            one_shot: true,
            test_classes: 10,
            test_fraction: 0.2,
            background_noise: 0.03,
            clutter: 0.3,
            illumination: IlluminationKnobs::default(),
            deformation: DeformKnobs::default(),
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 4 {
            return Err(Error::Config(format!(
                "n_classes = {} but at least 4 are needed",
                self.n_classes
            )));
        }
        if self.n_classes > GLYPH_INVENTORY {
            return Err(Error::Config(format!(
                "only {GLYPH_INVENTORY} distinguishable glyphs, {} classes requested",
                self.n_classes
            )));
        }
        if self.image_size < 4 || self.samples_per_class == 0 {
            return Err(Error::Config("image_size >= 4 and samples_per_class >= 1 required".into()));
        }
        if self.one_shot && (self.test_classes == 0 || self.test_classes >= self.n_classes) {
            return Err(Error::Config(format!(
                "one-shot mode needs 1 <= test_classes < n_classes, got {}",
                self.test_classes
            )));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return Err(Error::Config("clutter must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config("test_fraction must lie in [0, 1)".into()));
        }
        let il = &self.illumination;
        let ordered = [
            il.gradient_strength.0 <= il.gradient_strength.1,
            il.spot_count.0 <= il.spot_count.1,
            il.spot_intensity.0 <= il.spot_intensity.1,
            il.shadow_count.0 <= il.shadow_count.1,
            il.shadow_opacity.0 <= il.shadow_opacity.1,
            il.gamma.0 <= il.gamma.1 && il.gamma.0 > 0.0,
            self.deformation.scale.0 <= self.deformation.scale.1 && self.deformation.scale.0 > 0.0,
        ];
        if ordered.contains(&false) {
            return Err(Error::Config("a synthetic range is inverted or non-positive".into()));
        }
        Ok(())
    }

    /// The glyphs used for classes `0..n_classes`, drawn from the inventory by seed.
    pub fn glyphs(&self) -> Vec<Glyph> {
        let mut order: Vec<usize> = (0..GLYPH_INVENTORY).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x9e37_79b9_7f4a_7c15));
        order[..self.n_classes.min(GLYPH_INVENTORY)]
            .iter()
            .map(|&i| Glyph::from_index(i))
            .collect()
    }

    fn sample_rng(&self, class: usize, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((class as u64) << 32) | index as u64);
        rng
    }
}

/// Lighting drawn for one photograph.
#[derive(Debug, Clone, PartialEq)]
pub struct Lighting {
    pub gradient: f32,
    pub gradient_dir: f32,
    pub tint: [f32; 3],
    /// (u, v, sigma, intensity)
    pub spots: Vec<(f32, f32, f32, f32)>,
    /// Triangles in centered coordinates with their opacity.
    pub shadows: Vec<([(f32, f32); 3], f32)>,
    pub gamma: f32,
}

impl Lighting {
    pub fn sample<R: Rng>(knobs: &IlluminationKnobs, rng: &mut R) -> Self {
        let gradient = uniform(rng, knobs.gradient_strength);
        let gradient_dir = rng.random_range(0.0..std::f32::consts::TAU);
        let tint = [0; 3].map(|_| symmetric(rng, 0.3));
        let spots = (0..rng.random_range(knobs.spot_count.0..=knobs.spot_count.1))
            .map(|_| {
                (
                    symmetric(rng, 1.0),
                    symmetric(rng, 1.0),
                    rng.random_range(0.2..0.5),
                    uniform(rng, knobs.spot_intensity),
                )
            })
            .collect();
        let shadows = (0..rng.random_range(knobs.shadow_count.0..=knobs.shadow_count.1))
            .map(|_| {
                (
                    [0; 3].map(|_| (symmetric(rng, 1.5), symmetric(rng, 1.5))),
                    uniform(rng, knobs.shadow_opacity),
                )
            })
            .collect();
        Self {
            gradient,
            gradient_dir,
            tint,
            spots,
            shadows,
            gamma: uniform(rng, knobs.gamma),
        }
    }

    pub fn apply(&self, img: &Image) -> Image {
        let mut out = img.clone();
        let size = img.width();
        let half = size as f32 / 2.0;
        let (ds, dc) = self.gradient_dir.sin_cos();
        for y in 0..img.height() {
            for x in 0..size {
                let (u, v) = ((x as f32 + 0.5 - half) / half, (y as f32 + 0.5 - half) / half);
                let mut p = out.pixel(y, x);
                if self.gradient != 0.0 {
                    let proj = (u * dc + v * ds) / std::f32::consts::SQRT_2;
                    for c in 0..3 {
                        p[c] *= 1.0 + self.gradient * proj * (1.0 + self.tint[c]);
                    }
                }
                for &(su, sv, sigma, intensity) in &self.spots {
                    let d2 = (u - su).powi(2) + (v - sv).powi(2);
                    let a = intensity * (-d2 / (2.0 * sigma * sigma)).exp();
                    for (c, warm) in [1.0, 0.95, 0.8].iter().enumerate() {
                        p[c] += a * warm;
                    }
                }
                for (tri, opacity) in &self.shadows {
                    if in_triangle((u, v), tri) {
                        p = p.map(|q| q * (1.0 - opacity));
                    }
                }
                if self.gamma != 1.0 {
                    p = p.map(|q| q.max(0.0).powf(self.gamma));
                }
                out.set_pixel(y, x, p.map(|q| q.clamp(0.0, 1.0)));
            }
        }
        out
    }
}

fn in_triangle(p: (f32, f32), t: &[(f32, f32); 3]) -> bool {
    let side = |a: (f32, f32), b: (f32, f32)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let (d0, d1, d2) = (side(t[0], t[1]), side(t[1], t[2]), side(t[2], t[0]));
    let neg = d0 < 0.0 || d1 < 0.0 || d2 < 0.0;
    let pos = d0 > 0.0 || d1 > 0.0 || d2 > 0.0;
    !(neg && pos)
}

/// Deformed glyph over a cluttered background, before lighting, plus the
/// lighting that the full photograph receives.
pub fn photo_parts(cfg: &SyntheticConfig, glyph: &Glyph, class: usize, index: usize) -> (Image, Lighting) {
    let mut rng = cfg.sample_rng(class, index);
    let d = &cfg.deformation;
    let warp = Warp::similarity(
        symmetric(&mut rng, d.rotation_deg),
        uniform(&mut rng, d.scale),
        symmetric(&mut rng, d.translation),
        symmetric(&mut rng, d.translation),
    );
    let c1: [f32; 3] = [0; 3].map(|_| rng.random_range(0.1..0.9));
    let c2: [f32; 3] = [0; 3].map(|_| rng.random_range(0.1..0.9));
    let (bs, bc) = rng.random_range(0.0..std::f32::consts::TAU).sin_cos();
    let freq = rng.random_range(1.0..4.0f32);
    let clutter = cfg.clutter;
    let background = move |u: f32, v: f32| {
        let t = (0.5 + 0.5 * ((u * bc + v * bs) * freq).sin()).clamp(0.0, 1.0);
        [0, 1, 2].map(|k| {
            let stripe = c1[k] * (1.0 - t) + c2[k] * t;
            clutter * stripe + (1.0 - clutter) * TEMPLATE_BACKGROUND[k]
        })
    };
    let mut img = render(cfg.image_size, &warp, background, glyph);
    if cfg.background_noise > 0.0 {
        let noise = Normal::new(0.0, cfg.background_noise).expect("positive std");
        for v in img.data_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    let lighting = Lighting::sample(&cfg.illumination, &mut rng);
    (img, lighting)
}

pub fn render_photo(cfg: &SyntheticConfig, glyph: &Glyph, class: usize, index: usize) -> Image {
    let (composite, lighting) = photo_parts(cfg, glyph, class, index);
    lighting.apply(&composite)
}

/// Renders the whole dataset; a pure function of `cfg`.
pub fn generate_synthetic_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let glyphs = cfg.glyphs();
    let names = glyphs.iter().map(Glyph::name).collect();
    let templates = glyphs.iter().map(|g| render_template(g, cfg.image_size)).collect();
    let n_train_classes = if cfg.one_shot {
        cfg.n_classes - cfg.test_classes
    } else {
        cfg.n_classes
    };
    let n_test_per_class = ((cfg.samples_per_class as f32) * cfg.test_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (class, glyph) in glyphs.iter().enumerate() {
        for index in 0..cfg.samples_per_class {
            let photo = Photo {
                image: render_photo(cfg, glyph, class, index),
                label: class,
            };
            let to_test = if cfg.one_shot {
                class >= n_train_classes
            } else {
                index >= cfg.samples_per_class - n_test_per_class
            };
            if to_test {
                test.push(photo);
            } else {
                train.push(photo);
            }
        }
    }
    let protocol = if cfg.one_shot {
        Protocol::OneShot
    } else {
        Protocol::Traditional
    };
    Dataset::new("synthetic", names, templates, train, test, protocol)
}
