//! Standard image augmentations used in place of illumination augmentation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ops::{crop_resize, enhance, flip_horizontal, gaussian_blur, warp, Enhance, Warp};
use crate::data::Image;
use crate::error::{Error, Result};
use crate::data::template::{symmetric, uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Warp,
    Crop,
    Rotate,
    Flip,
    Enhance,
    Blur,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Warp,
        Family::Crop,
        Family::Rotate,
        Family::Flip,
        Family::Enhance,
        Family::Blur,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Family::Warp => "Warping",
            Family::Crop => "Cropping",
            Family::Rotate => "Rotation",
            Family::Flip => "Flipping",
            Family::Enhance => "Enhancement",
            Family::Blur => "Blur",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugRanges {
    pub shear: f32,
    pub aspect: (f32, f32),
    pub crop_fraction: (f32, f32),
    pub rotation_deg: f32,
    pub flip_probability: f32,
    pub enhance: (f32, f32),
    pub blur_sigma: (f32, f32),
}

impl Default for AugRanges {
    fn default() -> Self {
        Self {
            shear: 0.2,
            aspect: (0.85, 1.15),
            crop_fraction: (0.8, 1.0),
            rotation_deg: 15.0,
            flip_probability: 0.5,
            enhance: (0.7, 1.3),
            blur_sigma: (0.0, 1.5),
        }
    }
}

impl AugRanges {
    pub fn identity() -> Self {
        Self {
            shear: 0.0,
            aspect: (1.0, 1.0),
            crop_fraction: (1.0, 1.0),
            rotation_deg: 0.0,
            flip_probability: 0.0,
            enhance: (1.0, 1.0),
            blur_sigma: (0.0, 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugPolicy {
    families: BTreeSet<Family>,
    pub ranges: AugRanges,
}

impl AugPolicy {
    pub fn new(families: impl IntoIterator<Item = Family>, ranges: AugRanges) -> Result<Self> {
        let families: BTreeSet<Family> = families.into_iter().collect();
        if families.is_empty() {
            return Err(Error::InvalidArgument(
                "an augmentation policy needs at least one family".into(),
            ));
        }
        Ok(Self { families, ranges })
    }

    pub fn single(family: Family) -> Self {
        Self::new([family], AugRanges::default()).expect("one family")
    }

    pub fn all() -> Self {
        Self::new(Family::ALL, AugRanges::default()).expect("six families")
    }

    pub fn families(&self) -> &BTreeSet<Family> {
        &self.families
    }
}

/// Applies every enabled family once, in declaration order.
pub fn apply_policy(image: &Image, policy: &AugPolicy, seed: u64) -> Image {
    let r = &policy.ranges;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for family in &policy.families {
        out = match family {
            Family::Warp => {
                let w = Warp {
                    scale_x: uniform(&mut rng, r.aspect),
                    scale_y: uniform(&mut rng, r.aspect),
                    shear: symmetric(&mut rng, r.shear),
                    ..Warp::IDENTITY
                };
                warp(&out, &w)
            }
            Family::Crop => {
                let f = uniform(&mut rng, r.crop_fraction).clamp(0.1, 1.0);
                let (cx, cy) = (rng.random::<f32>(), rng.random::<f32>());
                crop_resize(&out, f, cx, cy)
            }
            Family::Rotate => {
                let w = Warp::similarity(symmetric(&mut rng, r.rotation_deg), 1.0, 0.0, 0.0);
                warp(&out, &w)
            }
            Family::Flip => {
                if rng.random::<f32>() < r.flip_probability {
                    flip_horizontal(&out)
                } else {
                    out
                }
            }
            Family::Enhance => {
                let e = Enhance {
                    brightness: uniform(&mut rng, r.enhance),
                    color: uniform(&mut rng, r.enhance),
                    contrast: uniform(&mut rng, r.enhance),
                    sharpness: uniform(&mut rng, r.enhance),
                };
                enhance(&out, &e)
            }
            Family::Blur => gaussian_blur(&out, uniform(&mut rng, r.blur_sigma).max(0.0)),
        };
    }
    out.clamp_unit();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> Image {
        let mut img = Image::filled(10, 10, [0.2, 0.4, 0.6]);
        for y in 2..5 {
            for x in 1..8 {
                img.set_pixel(y, x, [1.0, 0.0, 0.3]);
            }
        }
        img
    }

    #[test]
    fn zero_width_ranges_are_identity() {
        let p = AugPolicy::new(Family::ALL, AugRanges::identity()).unwrap();
        assert_eq!(apply_policy(&image(), &p, 3), image());
    }

    #[test]
    fn deterministic_and_in_range() {
        let p = AugPolicy::all();
        let a = apply_policy(&image(), &p, 8);
        assert_eq!(a, apply_policy(&image(), &p, 8));
        assert!(a.in_unit_range());
        assert_eq!((a.width(), a.height()), (10, 10));
    }

    #[test]
    fn certain_flip_applied_twice_is_identity() {
        let p = AugPolicy::new(
            [Family::Flip],
            AugRanges {
                flip_probability: 1.0,
                ..AugRanges::default()
            },
        )
        .unwrap();
        let once = apply_policy(&image(), &p, 1);
        assert_ne!(once, image());
        assert_eq!(apply_policy(&once, &p, 2), image());
    }

    #[test]
    fn empty_policy_is_rejected() {
        assert!(AugPolicy::new([], AugRanges::default()).is_err());
    }
}
