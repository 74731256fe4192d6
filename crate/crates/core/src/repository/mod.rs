//! The illumination repository: banked illumination halves plus the
//! selection (k-means) and expansion (interpolation) recipes.

mod format;
mod kmeans;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureGrid, SplitFeature};

pub use format::{FORMAT_VERSION, MAGIC};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Raw,
    Center,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepoMeta {
    pub source: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub provenance: Vec<Provenance>,
}

/// One parent pair of an interpolated feature: `gamma * z_i + (1 - gamma) * z_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolation {
    pub i: usize,
    pub j: usize,
    pub gamma: f32,
}

/// Ordered, immutable collection of same-shaped illumination grids.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationRepository {
    features: Vec<FeatureGrid>,
    meta: RepoMeta,
}

impl IlluminationRepository {
    /// Validates shapes and metadata; the only way to assemble a repository.
    pub fn from_parts(features: Vec<FeatureGrid>, meta: RepoMeta) -> Result<Self> {
        if meta.provenance.len() != features.len() {
            return Err(Error::InvalidArgument(format!(
                "{} provenance tags for {} features",
                meta.provenance.len(),
                features.len()
            )));
        }
        let shape = (meta.channels, meta.height, meta.width);
        if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.shape() != shape) {
            return Err(Error::Shape(format!(
                "feature {i} is {:?}, repository holds {shape:?}",
                f.shape()
            )));
        }
        Ok(Self { features, meta })
    }

    /// A repository with no features, e.g. for an augmentation run that
    /// should degrade to nothing.
    pub fn empty(channels: usize, height: usize, width: usize) -> Self {
        Self {
            features: Vec::new(),
            meta: RepoMeta {
                source: String::new(),
                channels,
                height,
                width,
                seed: 0,
                provenance: Vec::new(),
            },
        }
    }

    /// Banks the illumination half of every split feature, in order.
    pub fn build(split_features: impl IntoIterator<Item = SplitFeature>) -> Result<Self> {
        Self::from_illumination(split_features.into_iter().map(|s| s.illu))
    }

    pub fn from_illumination(grids: impl IntoIterator<Item = FeatureGrid>) -> Result<Self> {
        let features: Vec<FeatureGrid> = grids.into_iter().collect();
        let first = features
            .first()
            .ok_or_else(|| Error::Empty("repository build stream".into()))?;
        let (channels, height, width) = first.shape();
        let meta = RepoMeta {
            source: String::new(),
            channels,
            height,
            width,
            seed: 0,
            provenance: vec![Provenance::Raw; features.len()],
        };
        Self::from_parts(features, meta)
    }

    pub fn with_origin(mut self, source: impl Into<String>, seed: u64) -> Self {
        self.meta.source = source.into();
        self.meta.seed = seed;
        self
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[FeatureGrid] {
        &self.features
    }

    pub fn get(&self, index: usize) -> Result<&FeatureGrid> {
        self.features.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "repository index {index} out of range for {} features",
                self.len()
            ))
        })
    }

    pub fn meta(&self) -> &RepoMeta {
        &self.meta
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.meta.channels, self.meta.height, self.meta.width)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        format::save(self, path.as_ref())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        format::load(path.as_ref())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        format::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        format::decode(bytes)
    }

    /// Replaces the repository by `k` k-means centers.
    pub fn select_kmeans(&self, k: usize, seed: u64) -> Result<Self> {
        Ok(self.select_kmeans_traced(k, seed)?.0)
    }

    /// As [`Self::select_kmeans`], also returning the clustering itself.
    pub fn select_kmeans_traced(&self, k: usize, seed: u64) -> Result<(Self, KMeansResult)> {
        if k == 0 || k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} must lie in [1, {}]",
                self.len()
            )));
        }
        let points: Vec<&[f32]> = self.features.iter().map(|f| f.values.as_slice()).collect();
        let result = kmeans(&points, KMeansConfig::new(k, seed))?;
        let (c, h, w) = self.shape();
        let features = result
            .centers
            .iter()
            .map(|center| {
                FeatureGrid::new(c, h, w, center.iter().map(|v| *v as f32).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = RepoMeta {
            seed,
            provenance: vec![Provenance::Center; k],
            ..self.meta.clone()
        };
        Ok((Self::from_parts(features, meta)?, result))
    }

    /// Draws `n_exp` random convex combinations of feature pairs.
    pub fn expand_interpolate(&self, n_exp: usize, seed: u64) -> Result<Self> {
        Ok(self.expand_interpolate_traced(n_exp, seed)?.0)
    }

    pub fn expand_interpolate_traced(
        &self,
        n_exp: usize,
        seed: u64,
    ) -> Result<(Self, Vec<Interpolation>)> {
        if self.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "interpolation needs at least 2 features, repository has {}",
                self.len()
            )));
        }
        if n_exp == 0 {
            return Err(Error::InvalidArgument("n_exp must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = self.shape();
        let mut features = Vec::with_capacity(n_exp);
        let mut parents = Vec::with_capacity(n_exp);
        for _ in 0..n_exp {
            let i = rng.random_range(0..self.len());
            let j = rng.random_range(0..self.len());
            let gamma: f32 = rng.random();
            features.push(FeatureGrid::new(
                c,
                h,
                w,
                interpolate(&self.features[i].values, &self.features[j].values, gamma),
            )?);
            parents.push(Interpolation { i, j, gamma });
        }
        let meta = RepoMeta {
            seed,
            provenance: vec![Provenance::Interpolated; n_exp],
            ..self.meta.clone()
        };
        Ok((Self::from_parts(features, meta)?, parents))
    }
}

/// `gamma * a + (1 - gamma) * b`, kept inside `[min(a, b), max(a, b)]`.
pub fn interpolate(a: &[f32], b: &[f32], gamma: f32) -> Vec<f32> {
    let g = gamma as f64;
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let v = (g * x as f64 + (1.0 - g) * y as f64) as f32;
            v.clamp(x.min(y), x.max(y))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(values: &[f32]) -> FeatureGrid {
        FeatureGrid::new(values.len(), 1, 1, values.to_vec()).unwrap()
    }

    fn split(sem: &[f32], illu: &[f32]) -> SplitFeature {
        SplitFeature::new(grid(sem), grid(illu)).unwrap()
    }

    #[test]
    fn build_copies_illumination_halves_in_order() {
        let inputs: Vec<SplitFeature> = (0..5)
            .map(|i| split(&[i as f32, 0.0], &[-(i as f32), 1.5 * i as f32]))
            .collect();
        let repo = IlluminationRepository::build(inputs.clone()).unwrap();
        assert_eq!(repo.len(), 5);
        for (f, s) in repo.features().iter().zip(&inputs) {
            assert_eq!(f, &s.illu);
        }
        assert!(repo.meta().provenance.iter().all(|p| *p == Provenance::Raw));
    }

    #[test]
    fn build_rejects_empty_and_mixed_shapes() {
        assert!(IlluminationRepository::build(Vec::new()).is_err());
        let mixed = vec![split(&[0.0], &[1.0]), split(&[0.0, 0.0], &[1.0, 1.0])];
        assert!(matches!(
            IlluminationRepository::build(mixed),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn interpolation_midpoint() {
        assert_eq!(interpolate(&[0.0, 0.0], &[2.0, 2.0], 0.5), vec![1.0, 1.0]);
    }

    #[test]
    fn expansion_stays_between_parents() {
        let repo = IlluminationRepository::from_illumination(
            [[0.3f32, -2.0, 5.0], [1.0, 4.0, -1.0], [0.0, 0.0, 0.0]].map(|v| grid(&v)),
        )
        .unwrap();
        let (out, parents) = repo.expand_interpolate_traced(200, 3).unwrap();
        assert_eq!(out.len(), 200);
        for (f, p) in out.features().iter().zip(&parents) {
            let (a, b) = (&repo.features()[p.i].values, &repo.features()[p.j].values);
            for ((v, x), y) in f.values.iter().zip(a).zip(b) {
                assert!(x.min(*y) <= *v && *v <= x.max(*y));
            }
        }
        assert_eq!(out, repo.expand_interpolate(200, 3).unwrap());
        assert!(out
            .meta()
            .provenance
            .iter()
            .all(|p| *p == Provenance::Interpolated));
    }

    #[test]
    fn expansion_needs_two_features() {
        let repo = IlluminationRepository::from_illumination([grid(&[1.0])]).unwrap();
        assert!(repo.expand_interpolate(4, 0).is_err());
    }

    #[test]
    fn selection_recovers_two_scalar_clusters() {
        let repo = IlluminationRepository::from_illumination(
            [0.0f32, 1.0, 10.0, 11.0].map(|v| grid(&[v])),
        )
        .unwrap();
        let sel = repo.select_kmeans(2, 5).unwrap();
        let mut centers: Vec<f32> = sel.features().iter().map(|f| f.values[0]).collect();
        centers.sort_by(f32::total_cmp);
        assert_eq!(centers, vec![0.5, 10.5]);
        assert!(repo.select_kmeans(5, 0).is_err());
    }

    #[test]
    fn index_out_of_range_is_rejected() {
        let repo = IlluminationRepository::from_illumination([grid(&[1.0])]).unwrap();
        assert!(repo.get(0).is_ok());
        assert!(repo.get(1).is_err());
    }
}
