//! Separation (phase 1), augmentation (phase 2) and real-image
//! reconstruction training loops.

mod augmentation;
mod recon;
mod separation;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossToggles;
use crate::model::ModelConfig;
use crate::nn::AdamConfig;

pub use augmentation::{
    encode_variants, train_augmentation, AugmentationReport, SupportSet, VariantSource,
};
pub use recon::{train_real_reconstructor, ReconReport};
pub use separation::{build_repository, separation_step, train_separation, SeparationOutcome};

/// Flat run configuration; every key has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    /// Mixing proportion of the semantic half.
    pub r: f32,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub batch_size: usize,
    /// Photos per class in a separation batch (at least 2).
    pub per_class: usize,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub epochs_recon: usize,
    pub exchange: bool,
    #[serde(rename = "match")]
    pub matching: bool,
    pub recon: bool,
    pub illu: bool,
    pub template_processing: bool,
    /// Mix support semantics with banked illumination; off mixes each
    /// support feature with its own illumination half.
    pub illumination_augmentation: bool,
    /// Processed variants per template per phase-2 epoch.
    pub variants: usize,
    pub freeze_encoder_phase2: bool,
    /// Optional k-means selection size for the repository.
    pub k: Option<usize>,
    /// Optional interpolation count applied after selection.
    pub n_exp: Option<usize>,
    #[serde(rename = "C")]
    pub channels: usize,
    pub encoder_width: usize,
    pub decoder_width: usize,
    pub localizer_width: usize,
    pub classifier_width0: usize,
    pub classifier_width1: usize,
    /// Where each completed separation epoch is checkpointed.
    pub checkpoint: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            r: 0.5,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 64,
            per_class: 4,
            epochs_phase1: 10,
            epochs_phase2: 10,
            epochs_recon: 5,
            exchange: true,
            matching: true,
            recon: true,
            illu: true,
            template_processing: true,
            illumination_augmentation: true,
            variants: 4,
            freeze_encoder_phase2: true,
            k: None,
            n_exp: None,
            channels: 32,
            encoder_width: 32,
            decoder_width: 32,
            localizer_width: 16,
            classifier_width0: 32,
            classifier_width1: 64,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::Config(format!("r = {} must lie in (0, 1]", self.r)));
        }
        if self.batch_size < 2 || self.per_class < 2 {
            return Err(Error::Config("batch_size and per_class must be at least 2".into()));
        }
        if self.variants == 0 {
            return Err(Error::Config("variants must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be positive".into()));
        }
        Ok(())
    }

    pub fn toggles(&self) -> LossToggles {
        LossToggles {
            exchange: self.exchange,
            matching: self.matching,
            recon: self.recon,
            illumination: self.illu,
        }
    }

    pub fn set_toggles(&mut self, t: LossToggles) {
        self.exchange = t.exchange;
        self.matching = t.matching;
        self.recon = t.recon;
        self.illu = t.illumination;
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn model_config(&self, classes: usize, image_size: usize) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            image_size,
            classes,
            seed: self.seed,
            encoder_width: self.encoder_width,
            decoder_width: self.decoder_width,
            localizer_width: self.localizer_width,
            classifier_widths: (self.classifier_width0, self.classifier_width1),
        }
    }

    /// Applies a `key=value` override; the value is parsed as JSON and
    /// falls back to a plain string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut obj = serde_json::to_value(&*self)?;
        let map = obj.as_object_mut().expect("struct serializes to an object");
        if !map.contains_key(key) {
            return Err(Error::Config(format!("unknown config key `{key}`")));
        }
        let parsed = serde_json::from_str(value)
            .unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
        map.insert(key.to_string(), parsed);
        *self = serde_json::from_value(obj)
            .map_err(|e| Error::Config(format!("bad value for `{key}`: {e}")))?;
        Ok(())
    }

    /// Stable digest of the resolved configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&bytes);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Distinct, reproducible RNG streams for each consumer of randomness.
pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub(crate) mod streams {
    pub const SAMPLER: u64 = 1;
    pub const PAIRING: u64 = 2;
    pub const PHASE2: u64 = 3;
    pub const VARIANTS: u64 = 4;
    pub const RECON: u64 = 5;
}

/// One epoch of class-balanced batches over `labels`: every index appears
/// exactly once and each class present in a batch has at least two members
/// (when the class has two photos at all).
pub fn balanced_batches(
    labels: &[usize],
    batch_size: usize,
    per_class: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for idx in by_class.values_mut() {
        idx.shuffle(rng);
        let mut chunks: Vec<Vec<usize>> = idx.chunks(per_class).map(|c| c.to_vec()).collect();
        if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() < 2) {
            let tail = chunks.pop().expect("nonempty");
            chunks.last_mut().expect("nonempty").extend(tail);
        }
        groups.extend(chunks);
    }
    groups.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for g in groups {
        if !current.is_empty() && current.len() + g.len() > batch_size {
            batches.push(std::mem::take(&mut current));
        }
        current.extend(g);
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}
