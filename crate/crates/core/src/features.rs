//! Feature-space mixup, exchange pairing and augmented-set construction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{FeatureGrid, SplitFeature};
use crate::repository::IlluminationRepository;

/// Mixing proportion used throughout unless configured otherwise.
pub const DEFAULT_R: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixProvenance {
    pub sem_source: usize,
    pub illu_source: usize,
    pub r: f32,
}

/// A classifier input: mixed halves labeled by the semantic source.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedFeature {
    pub grid: FeatureGrid,
    pub label: usize,
    pub provenance: MixProvenance,
}

pub fn check_r(r: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("r = {r} must lie in [0, 1]")));
    }
    Ok(())
}

/// `out = r * sem + (1 - r) * illu`. Every mix in training and inference
/// goes through this loop.
pub fn mix_into(sem: &[f32], illu: &[f32], r: f32, out: &mut [f32]) {
    debug_assert!(sem.len() == illu.len() && sem.len() == out.len());
    let q = 1.0 - r;
    for ((o, s), i) in out.iter_mut().zip(sem).zip(illu) {
        *o = r * s + q * i;
    }
}

pub fn mix(sem: &FeatureGrid, illu: &FeatureGrid, r: f32) -> Result<FeatureGrid> {
    check_r(r)?;
    if sem.shape() != illu.shape() {
        return Err(Error::Shape(format!(
            "cannot mix {:?} with {:?}",
            sem.shape(),
            illu.shape()
        )));
    }
    let mut out = FeatureGrid::zeros(sem.channels, sem.height, sem.width);
    mix_into(&sem.values, &illu.values, r, &mut out.values);
    Ok(out)
}

/// One uniformly drawn partner per element; self-pairing allowed.
pub fn exchange_partners(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

fn check_batch(features: &[SplitFeature], labels: &[usize]) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty("exchange batch".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features for {} labels",
            features.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn exchange_with_partners(
    features: &[SplitFeature],
    labels: &[usize],
    partners: &[usize],
    r: f32,
) -> Result<Vec<MixedFeature>> {
    check_batch(features, labels)?;
    if partners.len() != features.len() || partners.iter().any(|&j| j >= features.len()) {
        return Err(Error::InvalidArgument("partner list does not fit the batch".into()));
    }
    features
        .iter()
        .zip(labels)
        .zip(partners)
        .enumerate()
        .map(|(i, ((f, &label), &j))| {
            Ok(MixedFeature {
                grid: mix(&f.sem, &features[j].illu, r)?,
                label,
                provenance: MixProvenance {
                    sem_source: i,
                    illu_source: j,
                    r,
                },
            })
        })
        .collect()
}

/// One exchanged feature per element, partners drawn from `pairing_seed`.
pub fn build_exchange_batch(
    features: &[SplitFeature],
    labels: &[usize],
    r: f32,
    pairing_seed: u64,
) -> Result<Vec<MixedFeature>> {
    check_batch(features, labels)?;
    let partners = exchange_partners(features.len(), pairing_seed);
    exchange_with_partners(features, labels, &partners, r)
}

/// Every `(i, j)` pair, semantic-major.
pub fn full_exchange_set(
    features: &[SplitFeature],
    labels: &[usize],
    r: f32,
) -> Result<Vec<MixedFeature>> {
    check_batch(features, labels)?;
    let mut out = Vec::with_capacity(features.len() * features.len());
    for (i, (f, &label)) in features.iter().zip(labels).enumerate() {
        for (j, g) in features.iter().enumerate() {
            out.push(MixedFeature {
                grid: mix(&f.sem, &g.illu, r)?,
                label,
                provenance: MixProvenance {
                    sem_source: i,
                    illu_source: j,
                    r,
                },
            });
        }
    }
    Ok(out)
}

/// Lazily yields `support x repo` mixed features, support-major.
#[derive(Debug, Clone)]
pub struct AugmentedSet<'a> {
    support: &'a [(FeatureGrid, usize)],
    repo: &'a IlluminationRepository,
    r: f32,
    next: usize,
}

impl AugmentedSet<'_> {
    pub fn total(&self) -> usize {
        self.support.len() * self.repo.len()
    }
}

impl Iterator for AugmentedSet<'_> {
    type Item = MixedFeature;

    fn next(&mut self) -> Option<MixedFeature> {
        if self.next >= self.total() {
            return None;
        }
        let (s, j) = (self.next / self.repo.len(), self.next % self.repo.len());
        self.next += 1;
        let (sem, label) = &self.support[s];
        let illu = &self.repo.features()[j];
        let mut grid = FeatureGrid::zeros(sem.channels, sem.height, sem.width);
        mix_into(&sem.values, &illu.values, self.r, &mut grid.values);
        Some(MixedFeature {
            grid,
            label: *label,
            provenance: MixProvenance {
                sem_source: s,
                illu_source: j,
                r: self.r,
            },
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.total() - self.next;
        (left, Some(left))
    }
}

impl ExactSizeIterator for AugmentedSet<'_> {}

pub fn build_augmented_set<'a>(
    support_sems: &'a [(FeatureGrid, usize)],
    repo: &'a IlluminationRepository,
    r: f32,
) -> Result<AugmentedSet<'a>> {
    check_r(r)?;
    let shape = repo.shape();
    if let Some((i, (g, _))) = support_sems
        .iter()
        .enumerate()
        .find(|(_, (g, _))| g.shape() != shape)
    {
        return Err(Error::Shape(format!(
            "support feature {i} is {:?}, repository holds {shape:?}",
            g.shape()
        )));
    }
    if repo.is_empty() {
        log::warn!("illumination repository is empty; augmented set has no members");
    }
    Ok(AugmentedSet {
        support: support_sems,
        repo,
        r,
        next: 0,
    })
}
