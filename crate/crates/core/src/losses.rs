//! Training objectives with analytic gradients.
//!
//! Everything here is generic over the float type so the gradient checks can
//! run in `f64` while training runs in `f32`.

use std::collections::BTreeMap;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor used inside logarithms.
pub const LOG_EPS: f64 = 1e-7;

/// A scalar loss and its gradient with respect to the first input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grad: Vec<T>,
}

fn cast<T: Float>(v: f64) -> T {
    T::from(v).expect("representable constant")
}

pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|v| (*v - max).exp()).collect();
    let sum = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy of row-major `[N, classes]` logits against class ids.
pub fn cross_entropy<T: Float>(logits: &[T], classes: usize, labels: &[usize]) -> Result<LossGrad<T>> {
    if labels.is_empty() {
        return Err(Error::Empty("cross-entropy batch".into()));
    }
    if classes == 0 || logits.len() != classes * labels.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels over {classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let n = cast::<T>(labels.len() as f64);
    let mut value = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} outside [0, {classes})"
            )));
        }
        let row = &logits[i * classes..(i + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row
            .iter()
            .map(|v| (*v - max).exp())
            .fold(T::zero(), |a, b| a + b)
            .ln()
            + max;
        value = value + (lse - row[y]);
        for (c, g) in grad[i * classes..(i + 1) * classes].iter_mut().enumerate() {
            let p = (row[c] - lse).exp();
            let target = if c == y { T::one() } else { T::zero() };
            *g = (p - target) / n;
        }
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Classification loss over the exchanged feature set.
pub fn exchange_loss<T: Float>(logits: &[T], classes: usize, labels: &[usize]) -> Result<LossGrad<T>> {
    cross_entropy(logits, classes, labels)
}

/// Classification loss over the illumination-augmented feature set.
pub fn augmentation_loss<T: Float>(logits: &[T], classes: usize, labels: &[usize]) -> Result<LossGrad<T>> {
    cross_entropy(logits, classes, labels)
}

/// Mean squared difference between rectified semantic features and the
/// template's semantic features. The gradient is with respect to
/// `rectified`; the template side receives its negation.
pub fn match_loss<T: Float>(rectified: &[T], template: &[T]) -> Result<LossGrad<T>> {
    if rectified.len() != template.len() {
        return Err(Error::Shape(format!(
            "match inputs have {} and {} elements",
            rectified.len(),
            template.len()
        )));
    }
    if rectified.is_empty() {
        return Err(Error::Empty("match batch".into()));
    }
    let n = cast::<T>(rectified.len() as f64);
    let two = cast::<T>(2.0);
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(rectified.len());
    for (a, b) in rectified.iter().zip(template) {
        let d = *a - *b;
        value = value + d * d;
        grad.push(two * d / n);
    }
    Ok(LossGrad {
        value: value / n,
        grad,
    })
}

/// Pixel-mean binary cross-entropy, plus how many predictions had to be
/// clamped away from exactly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BceOutput<T> {
    pub value: T,
    pub grad: Vec<T>,
    pub clamped: usize,
}

pub fn bce_image_loss<T: Float>(prediction: &[T], target: &[T]) -> Result<BceOutput<T>> {
    if prediction.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} pixels, target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::Empty("bce input".into()));
    }
    let eps = cast::<T>(LOG_EPS);
    let one = T::one();
    let n = cast::<T>(prediction.len() as f64);
    let mut clamped = 0;
    let mut value = T::zero();
    let mut grad = Vec::with_capacity(prediction.len());
    for (&p, &t) in prediction.iter().zip(target) {
        let pc = if p < eps {
            clamped += 1;
            eps
        } else if p > one - eps {
            clamped += 1;
            one - eps
        } else {
            p
        };
        value = value - (t * pc.ln() + (one - t) * (one - pc).ln());
        grad.push((-(t / pc) + (one - t) / (one - pc)) / n);
    }
    Ok(BceOutput {
        value: value / n,
        grad,
        clamped,
    })
}

/// Per-class grouping of batch positions.
pub fn group_by_label(labels: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        groups.entry(y).or_default().push(i);
    }
    groups
}

/// Post-interventional disagreement: for each class, the summed Euclidean
/// distance of every member's illumination feature from the class mean.
/// `grads[i]` is the gradient with respect to `features[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PidaOutput<T> {
    pub value: T,
    pub grads: Vec<Vec<T>>,
}

pub fn pida<T: Float>(features: &[&[T]], labels: &[usize]) -> Result<PidaOutput<T>> {
    if features.is_empty() {
        return Err(Error::Empty("illumination grouping".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    let dim = features[0].len();
    if features.iter().any(|f| f.len() != dim) {
        return Err(Error::Shape("illumination features differ in size".into()));
    }
    let mut value = T::zero();
    let mut grads = vec![vec![T::zero(); dim]; features.len()];
    for members in group_by_label(labels).values() {
        let count = cast::<T>(members.len() as f64);
        let mut mean = vec![T::zero(); dim];
        for &i in members {
            for (m, v) in mean.iter_mut().zip(features[i]) {
                *m = *m + *v;
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / count);

        // unit residuals u_i = (z_i - mean) / |z_i - mean|
        let mut units: Vec<Vec<T>> = Vec::with_capacity(members.len());
        let mut unit_sum = vec![T::zero(); dim];
        for &i in members {
            let diff: Vec<T> = features[i].iter().zip(&mean).map(|(z, m)| *z - *m).collect();
            let norm = diff.iter().fold(T::zero(), |a, d| a + *d * *d).sqrt();
            value = value + norm;
            let unit: Vec<T> = if norm > T::zero() {
                diff.iter().map(|d| *d / norm).collect()
            } else {
                vec![T::zero(); dim]
            };
            for (s, u) in unit_sum.iter_mut().zip(&unit) {
                *s = *s + *u;
            }
            units.push(unit);
        }
        // d/dz_k sum_i |z_i - mean| = u_k - (1/N) sum_i u_i
        for (&i, unit) in members.iter().zip(&units) {
            for ((g, u), s) in grads[i].iter_mut().zip(unit).zip(&unit_sum) {
                *g = *u - *s / count;
            }
        }
    }
    Ok(PidaOutput { value, grads })
}

/// Which separation-phase terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossToggles {
    pub exchange: bool,
    pub matching: bool,
    pub recon: bool,
    pub illumination: bool,
}

impl Default for LossToggles {
    fn default() -> Self {
        Self {
            exchange: true,
            matching: true,
            recon: true,
            illumination: true,
        }
    }
}

/// Per-term values of the separation objective and their unit-weight sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub exchange: f64,
    pub matching: f64,
    pub template_recon: f64,
    /// Negative (batch-normalized) disagreement; never positive.
    pub illumination: f64,
    pub total: f64,
}

/// Raw term values before toggles are applied.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub exchange: f64,
    pub matching: f64,
    pub template_recon: f64,
    pub illumination: f64,
}

pub fn total_separation_loss(parts: LossParts, toggles: LossToggles) -> Result<LossReport> {
    let pick = |on: bool, v: f64, name: &str| -> Result<f64> {
        if !on {
            return Ok(0.0);
        }
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} loss")));
        }
        Ok(v)
    };
    let exchange = pick(toggles.exchange, parts.exchange, "exchange")?;
    let matching = pick(toggles.matching, parts.matching, "match")?;
    let template_recon = pick(toggles.recon, parts.template_recon, "recon")?;
    let illumination = pick(toggles.illumination, parts.illumination, "illumination")?;
    Ok(LossReport {
        exchange,
        matching,
        template_recon,
        illumination,
        total: exchange + matching + template_recon + illumination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_classes() {
        let l = cross_entropy(&[0.0f64; 8], 4, &[0, 3]).unwrap();
        assert!((l.value - 4f64.ln()).abs() < 1e-12);
        assert!((l.value - 1.3863).abs() < 1e-4);
    }

    #[test]
    fn large_margin_drives_cross_entropy_to_zero() {
        let mut prev = f64::INFINITY;
        for margin in [1.0, 5.0, 20.0, 60.0] {
            let v = cross_entropy(&[margin, 0.0, 0.0], 3, &[0]).unwrap().value;
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 1e-20);
    }

    #[test]
    fn cross_entropy_is_batch_mean() {
        let a = cross_entropy(&[1.0f64, 2.0, 0.5], 3, &[0]).unwrap().value;
        let b = cross_entropy(&[0.3f64, -1.0, 2.0], 3, &[2]).unwrap().value;
        let both = cross_entropy(&[1.0, 2.0, 0.5, 0.3, -1.0, 2.0], 3, &[0, 2]).unwrap();
        assert!((both.value - (a + b) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_empty_and_out_of_range() {
        assert!(matches!(cross_entropy::<f64>(&[], 3, &[]), Err(Error::Empty(_))));
        assert!(cross_entropy(&[0.0f64; 3], 3, &[3]).is_err());
    }

    #[test]
    fn match_loss_examples() {
        let a = [1.0f64, -2.0, 0.5];
        assert_eq!(match_loss(&a, &a).unwrap().value, 0.0);
        let b: Vec<f64> = a.iter().map(|v| v + 0.3).collect();
        assert!((match_loss(&a, &b).unwrap().value - 0.09).abs() < 1e-12);
        assert!(match_loss(&a, &b[..2]).is_err());
    }

    #[test]
    fn bce_of_fair_coin_is_ln2() {
        let out = bce_image_loss(&[0.5f64; 12], &[0.5; 12]).unwrap();
        assert!((out.value - 2f64.ln()).abs() < 1e-12);
        assert_eq!(out.clamped, 0);
    }

    #[test]
    fn bce_vanishes_at_perfect_binary_reconstruction() {
        let target = [0.0f64, 1.0, 1.0, 0.0];
        let close: Vec<f64> = target.iter().map(|t| if *t > 0.5 { 1.0 - 1e-9 } else { 1e-9 }).collect();
        assert!(bce_image_loss(&close, &target).unwrap().value < 1e-6);
    }

    #[test]
    fn bce_clamps_and_flags_saturated_predictions() {
        let out = bce_image_loss(&[0.0f64, 1.0, 0.5], &[1.0, 0.0, 0.5]).unwrap();
        assert_eq!(out.clamped, 2);
        assert!(out.value.is_finite());
        assert!(out.grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn pida_hand_example() {
        let a = [0.0f64, 0.0];
        let b = [2.0f64, 0.0];
        let out = pida(&[&a, &b], &[0, 0]).unwrap();
        assert!((out.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn pida_of_identical_members_is_zero() {
        let a = [0.75f64, -0.25, 1.5];
        let out = pida(&[&a, &a, &a, &a], &[1, 1, 1, 1]).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.iter().flatten().all(|g| *g == 0.0));
        // inexact means leave only rounding noise
        let b = [0.7f64, -0.2, 1.3];
        assert!(pida(&[&b, &b, &b], &[2, 2, 2]).unwrap().value < 1e-12);
    }

    #[test]
    fn pida_rejects_empty_grouping() {
        assert!(matches!(pida::<f64>(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn total_loss_sums_enabled_parts() {
        let parts = LossParts {
            exchange: 1.0,
            matching: 1.0,
            template_recon: 1.0,
            illumination: -1.0,
        };
        let r = total_separation_loss(parts, LossToggles::default()).unwrap();
        assert_eq!(r.total, 2.0);

        let only_exchange = LossToggles {
            exchange: true,
            matching: false,
            recon: false,
            illumination: false,
        };
        let r = total_separation_loss(parts, only_exchange).unwrap();
        assert_eq!((r.matching, r.template_recon, r.illumination), (0.0, 0.0, 0.0));
        assert_eq!(r.total, 1.0);
    }

    #[test]
    fn non_finite_part_is_named() {
        let parts = LossParts {
            template_recon: f64::NAN,
            ..Default::default()
        };
        let err = total_separation_loss(parts, LossToggles::default()).unwrap_err();
        assert!(err.to_string().contains("recon"));
    }
}
