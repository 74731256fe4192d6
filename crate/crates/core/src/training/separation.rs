use rand::Rng;

use super::{balanced_batches, stream_rng, streams, TrainConfig};
use crate::data::{Dataset, Image, Split};
use crate::error::{Error, Result};
use crate::features::{exchange_partners, mix_into};
use crate::losses::{
    bce_image_loss, exchange_loss, match_loss, pida, total_separation_loss, LossParts, LossReport,
};
use crate::model::{save_checkpoint, FeatureGrid, SillModel};
use crate::nn::Adam;
use crate::repository::IlluminationRepository;
use crate::tensor::Tensor;

/// Phase-1 result: the separated model, the raw repository built from
/// every training photo, and one averaged report per epoch.
#[derive(Debug, Clone)]
pub struct SeparationOutcome {
    pub model: SillModel,
    pub repository: IlluminationRepository,
    pub reports: Vec<LossReport>,
}

fn add_scaled(dst: &mut [f32], src: &[f32], s: f32) {
    for (d, v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

/// Weight of the raw disagreement sum: per photo, and per unit of feature
/// RMS rather than feature norm, so it stays comparable to the mean-based
/// terms at any grid size.
pub fn pida_scale(batch: usize, feature_len: usize) -> f64 {
    1.0 / (batch as f64 * (feature_len as f64).sqrt())
}

/// One optimizer step of the separation objective. `templates[i]` is the
/// template of `images[i]`; `partners[i]` donates the illumination half
/// mixed with image `i`'s semantic half.
pub fn separation_step(
    model: &mut SillModel,
    adam: &mut Adam,
    images: &[&Image],
    templates: &[&Image],
    labels: &[usize],
    partners: &[usize],
    cfg: &TrainConfig,
) -> Result<LossReport> {
    let b = images.len();
    let toggles = cfg.toggles();
    let c = model.channels();
    let m = model.config.classes;
    let r = cfg.r;

    // templates only feed the match term through the encoder
    let encode_templates = toggles.matching;
    let x_img = Image::batch(images.iter().copied())?;
    let x = if encode_templates {
        Tensor::concat_batch(&x_img, &Image::batch(templates.iter().copied())?)?
    } else {
        x_img
    };
    let (z, enc_cache) = model.encoder.forward_train(&x);
    let zi = z.slice_batch(0, b);
    let sem = zi.slice_channels(0, c);
    let illu = zi.slice_channels(c, 2 * c);
    let mut g_sem = Tensor::zeros(sem.shape());
    let mut g_illu = Tensor::zeros(illu.shape());
    let mut parts = LossParts::default();

    if toggles.exchange {
        let mut mixed = Tensor::zeros(sem.shape());
        for i in 0..b {
            mix_into(sem.item(i), illu.item(partners[i]), r, mixed.item_mut(i));
        }
        let (logits, head_cache) = model.classifier.forward(&mixed);
        let ce = exchange_loss(logits.data(), m, labels)?;
        parts.exchange = ce.value as f64;
        let g_logits = Tensor::from_vec(logits.shape(), ce.grad)?;
        let g_mixed = model
            .classifier
            .backward(&head_cache, &g_logits, true)
            .expect("input gradient requested");
        for i in 0..b {
            add_scaled(g_sem.item_mut(i), g_mixed.item(i), r);
            add_scaled(g_illu.item_mut(partners[i]), g_mixed.item(i), 1.0 - r);
        }
    }

    if toggles.matching || toggles.recon {
        let (rect, _, loc_cache) = model.localizer.forward(&sem);
        let mut g_rect = Tensor::zeros(rect.shape());
        if toggles.matching {
            let sem_t = z.slice_batch(b, 2 * b).slice_channels(0, c);
            let ml = match_loss(rect.data(), sem_t.data())?;
            parts.matching = ml.value as f64;
            // the template side is a fixed target
            g_rect.data_mut().copy_from_slice(&ml.grad);
        }
        if toggles.recon {
            let (t_hat, dec_cache) = model.template_decoder.forward(&rect);
            let target = Image::batch(templates.iter().copied())?;
            let bce = bce_image_loss(t_hat.data(), target.data())?;
            parts.template_recon = bce.value as f64;
            let g = Tensor::from_vec(t_hat.shape(), bce.grad)?;
            let g_in = model
                .template_decoder
                .backward(&dec_cache, &g, true)
                .expect("input gradient requested");
            g_rect.add_assign(&g_in);
        }
        let g = model.localizer.backward(&loc_cache, &g_rect);
        g_sem.add_assign(&g);
    }

    if toggles.illumination {
        let feats: Vec<&[f32]> = (0..b).map(|i| illu.item(i)).collect();
        let out = pida(&feats, labels)?;
        let scale = pida_scale(b, feats[0].len());
        parts.illumination = -(out.value as f64) * scale;
        for (i, g) in out.grads.iter().enumerate() {
            add_scaled(g_illu.item_mut(i), g, -scale as f32);
        }
    }

    let report = total_separation_loss(parts, toggles)?;

    let mut gz = Tensor::zeros(z.shape());
    let half = sem.item_len();
    for i in 0..b {
        let item = gz.item_mut(i);
        item[..half].copy_from_slice(g_sem.item(i));
        item[half..].copy_from_slice(g_illu.item(i));
    }
    model.encoder.backward(&enc_cache, &gz);
    adam.step(model);
    Ok(report)
}

/// Trains the separation objective, then banks the illumination half of
/// every training photo.
pub fn train_separation(dataset: &Dataset, cfg: &TrainConfig) -> Result<SeparationOutcome> {
    cfg.validate()?;
    let n = dataset.len(Split::Train);
    if n == 0 {
        return Err(Error::Empty("training split".into()));
    }
    let mut model = SillModel::new(cfg.model_config(dataset.num_classes(), dataset.image_size()))?;
    let mut adam = Adam::new(cfg.adam());
    let labels = dataset.labels(Split::Train);
    let mut sampler = stream_rng(cfg.seed, streams::SAMPLER);
    let mut pairing = stream_rng(cfg.seed, streams::PAIRING);
    let mut reports = Vec::with_capacity(cfg.epochs_phase1);

    for epoch in 0..cfg.epochs_phase1 {
        let batches = balanced_batches(&labels, cfg.batch_size, cfg.per_class, &mut sampler);
        let mut sum = LossReport::default();
        for batch in &batches {
            let images: Vec<&Image> = batch.iter().map(|&i| dataset.photo(Split::Train, i)).collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let templates: Vec<&Image> = batch_labels.iter().map(|&y| dataset.template(y)).collect();
            let partners = exchange_partners(batch.len(), pairing.random());
            let rep = separation_step(
                &mut model,
                &mut adam,
                &images,
                &templates,
                &batch_labels,
                &partners,
                cfg,
            )
            .map_err(|e| match e {
                Error::NonFinite(what) => Error::Diverged { epoch, what },
                other => other,
            })?;
            sum.exchange += rep.exchange;
            sum.matching += rep.matching;
            sum.template_recon += rep.template_recon;
            sum.illumination += rep.illumination;
            sum.total += rep.total;
        }
        let k = batches.len() as f64;
        let mean = LossReport {
            exchange: sum.exchange / k,
            matching: sum.matching / k,
            template_recon: sum.template_recon / k,
            illumination: sum.illumination / k,
            total: sum.total / k,
        };
        log::info!("separation epoch {epoch}: {mean:?}");
        reports.push(mean);
        if let Some(path) = &cfg.checkpoint {
            save_checkpoint(&model, path)?;
        }
    }
    let repository = build_repository(&model, dataset)?.with_origin(dataset.name.clone(), cfg.seed);
    Ok(SeparationOutcome {
        model,
        repository,
        reports,
    })
}

/// Encodes every training photo and keeps the illumination halves, in
/// split order.
pub fn build_repository(model: &SillModel, dataset: &Dataset) -> Result<IlluminationRepository> {
    let n = dataset.len(Split::Train);
    let c = model.channels();
    let mut grids = Vec::with_capacity(n);
    for start in (0..n).step_by(64) {
        let end = (start + 64).min(n);
        let images: Vec<&Image> = (start..end).map(|i| dataset.photo(Split::Train, i)).collect();
        let z = model.encode_batch(&images)?;
        let illu = z.slice_channels(c, 2 * c);
        for i in 0..illu.batch() {
            grids.push(FeatureGrid::from_tensor_item(&illu, i));
        }
    }
    if grids.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("illumination features".into()));
    }
    IlluminationRepository::from_illumination(grids)
}
