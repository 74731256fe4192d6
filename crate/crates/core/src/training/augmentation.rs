use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::{stream_rng, streams, TrainConfig};
use crate::baseline::{apply_policy, AugPolicy};
use crate::data::{process_template_with, Dataset, Image, TemplateAug};
use crate::error::{Error, Result};
use crate::features::{check_r, mix_into};
use crate::losses::augmentation_loss;
use crate::model::{Classifier, SillModel, SplitFeature};
use crate::nn::Adam;
use crate::repository::IlluminationRepository;
use crate::tensor::Tensor;

/// How each epoch's support-template variants are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum VariantSource {
    /// The template itself, unchanged.
    Raw,
    /// Geometric, enhancement and blur processing.
    Processed(TemplateAug),
    /// A standard-augmentation policy from the comparison harness.
    Standard(AugPolicy),
}

impl VariantSource {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        if cfg.template_processing {
            VariantSource::Processed(TemplateAug::default())
        } else {
            VariantSource::Raw
        }
    }

    pub fn variant(&self, template: &Image, seed: u64) -> Image {
        match self {
            VariantSource::Raw => template.clone(),
            VariantSource::Processed(aug) => process_template_with(template, aug, seed),
            VariantSource::Standard(policy) => apply_policy(template, policy, seed),
        }
    }

    fn count(&self, requested: usize) -> usize {
        match self {
            VariantSource::Raw => 1,
            _ => requested,
        }
    }
}

/// Template images per class for the classes the classifier must learn.
#[derive(Debug, Clone, Default)]
pub struct SupportSet {
    pub required: BTreeSet<usize>,
    pub class_names: Vec<String>,
    pub templates: BTreeMap<usize, Vec<Image>>,
}

impl SupportSet {
    /// One template per listed class, read from the dataset's template
    /// table (never from photographs).
    pub fn from_templates(dataset: &Dataset, classes: impl IntoIterator<Item = usize>) -> Self {
        let required: BTreeSet<usize> = classes.into_iter().collect();
        let templates = required
            .iter()
            .map(|&c| (c, vec![dataset.template(c).clone()]))
            .collect();
        Self {
            required,
            class_names: dataset.class_names().to_vec(),
            templates,
        }
    }

    fn check(&self) -> Result<()> {
        for &c in &self.required {
            if self.templates.get(&c).is_none_or(|t| t.is_empty()) {
                let name = self.class_names.get(c).cloned().unwrap_or_else(|| c.to_string());
                return Err(Error::MissingSupportClass(name));
            }
        }
        if self.templates.values().all(|t| t.is_empty()) {
            return Err(Error::Empty("support set".into()));
        }
        Ok(())
    }

    /// `(label, template)` in class order.
    pub fn entries(&self) -> Vec<(usize, &Image)> {
        self.templates
            .iter()
            .flat_map(|(&c, ts)| ts.iter().map(move |t| (c, t)))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentationReport {
    pub epoch_losses: Vec<f64>,
    /// Classifier inputs drawn per epoch.
    pub features_per_epoch: usize,
    /// Smallest number of distinct variants any template produced in an epoch.
    pub min_distinct_variants: usize,
}

/// Encodes `variants` of each support entry for one epoch; returns per
/// entry the variant images and their split features.
pub fn encode_variants(
    model: &SillModel,
    entries: &[(usize, &Image)],
    source: &VariantSource,
    count: usize,
    seed: u64,
) -> Result<Vec<(Vec<Image>, Vec<SplitFeature>)>> {
    let mut out = Vec::with_capacity(entries.len());
    for (e, (_, template)) in entries.iter().enumerate() {
        let images: Vec<Image> = (0..source.count(count))
            .map(|v| {
                let s = seed ^ ((e as u64) << 20) ^ ((v as u64) << 40);
                source.variant(template, s)
            })
            .collect();
        let refs: Vec<&Image> = images.iter().collect();
        let z = model.encode_batch(&refs)?;
        let feats = (0..images.len()).map(|i| SplitFeature::from_tensor_item(&z, i)).collect();
        out.push((images, feats));
    }
    Ok(out)
}

/// Trains the classifier on support semantics mixed with banked
/// illumination. Only template images (and their variants) are encoded.
pub fn train_augmentation(
    model: &SillModel,
    repo: &IlluminationRepository,
    support: &SupportSet,
    cfg: &TrainConfig,
    source: &VariantSource,
) -> Result<(SillModel, AugmentationReport)> {
    cfg.validate()?;
    check_r(cfg.r)?;
    support.check()?;
    let c = model.channels();
    let s = model.config.image_size;
    if cfg.illumination_augmentation && repo.shape() != (c, s, s) {
        return Err(Error::Shape(format!(
            "repository holds {:?}, model features are ({c}, {s}, {s})",
            repo.shape()
        )));
    }
    if cfg.illumination_augmentation && repo.is_empty() {
        log::warn!("illumination repository is empty; nothing to train on");
    }
    let mut model = model.clone();
    let mut rng = stream_rng(cfg.seed, streams::PHASE2);
    let width = model.classifier.head.fc.in_features;
    model.classifier.head.fc = Classifier::fresh_fc(width, model.config.classes, &mut rng);
    let mut adam = Adam::new(cfg.adam());
    let mut adam_enc = Adam::new(cfg.adam());
    let mut variant_rng = stream_rng(cfg.seed, streams::VARIANTS);
    let entries = support.entries();
    let m = model.config.classes;
    let per_entry = repo.len();
    let mut report = AugmentationReport {
        features_per_epoch: entries.len() * per_entry,
        min_distinct_variants: usize::MAX,
        ..Default::default()
    };

    for epoch in 0..cfg.epochs_phase2 {
        let encoded = encode_variants(&model, &entries, source, cfg.variants, variant_rng.random())?;
        for (images, _) in &encoded {
            let mut distinct: Vec<&Image> = Vec::new();
            for im in images {
                if !distinct.contains(&im) {
                    distinct.push(im);
                }
            }
            report.min_distinct_variants = report.min_distinct_variants.min(distinct.len());
        }
        // (entry, repo index, variant) triples; one per support x repo pair
        let mut draws: Vec<(usize, usize, usize)> = Vec::with_capacity(report.features_per_epoch);
        for (e, (images, _)) in encoded.iter().enumerate() {
            for j in 0..per_entry {
                draws.push((e, j, rng.random_range(0..images.len())));
            }
        }
        draws.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for batch in draws.chunks(cfg.batch_size) {
            let b = batch.len();
            let mut mixed = Tensor::zeros(&[b, c, s, s]);
            let labels: Vec<usize> = batch.iter().map(|&(e, _, _)| entries[e].0).collect();
            let enc_pass = if cfg.freeze_encoder_phase2 {
                None
            } else {
                let imgs: Vec<&Image> = batch.iter().map(|&(e, _, v)| &encoded[e].0[v]).collect();
                Some(model.encoder.forward_train(&Image::batch(imgs)?))
            };
            for (i, &(e, j, v)) in batch.iter().enumerate() {
                let own = &encoded[e].1[v];
                let (sem, own_illu) = match &enc_pass {
                    Some((z, _)) => {
                        let item = z.item(i);
                        (&item[..c * s * s], &item[c * s * s..])
                    }
                    None => (own.sem.values.as_slice(), own.illu.values.as_slice()),
                };
                let illu = if cfg.illumination_augmentation {
                    repo.features()[j].values.as_slice()
                } else {
                    own_illu
                };
                mix_into(sem, illu, cfg.r, mixed.item_mut(i));
            }
            let (logits, cache) = model.classifier.forward(&mixed);
            let ce = augmentation_loss(logits.data(), m, &labels)?;
            if !ce.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    what: "augmentation loss".into(),
                });
            }
            loss_sum += ce.value as f64;
            batches += 1;
            let g = Tensor::from_vec(logits.shape(), ce.grad)?;
            let g_mixed = model.classifier.backward(&cache, &g, enc_pass.is_some());
            if let (Some((z, enc_cache)), Some(g_mixed)) = (&enc_pass, g_mixed) {
                let mut gz = Tensor::zeros(z.shape());
                let half = c * s * s;
                for i in 0..b {
                    let gi = g_mixed.item(i);
                    let item = gz.item_mut(i);
                    for k in 0..half {
                        item[k] = cfg.r * gi[k];
                        if !cfg.illumination_augmentation {
                            item[half + k] = (1.0 - cfg.r) * gi[k];
                        }
                    }
                }
                model.encoder.backward(enc_cache, &gz);
                adam_enc.step(&mut model.encoder);
            }
            adam.step(&mut model.classifier);
        }
        let mean = if batches > 0 { loss_sum / batches as f64 } else { 0.0 };
        log::info!("augmentation epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    if report.min_distinct_variants == usize::MAX {
        report.min_distinct_variants = 0;
    }
    model.classifier_ready = true;
    Ok((model, report))
}
