use rand::seq::SliceRandom;

use super::{stream_rng, streams, TrainConfig};
use crate::data::{Dataset, Image, Split};
use crate::error::{Error, Result};
use crate::losses::bce_image_loss;
use crate::model::SillModel;
use crate::nn::Adam;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReconReport {
    pub epoch_losses: Vec<f64>,
}

/// Fits the real-image decoder on frozen encoder outputs: both halves in,
/// the source photograph as the BCE target.
pub fn train_real_reconstructor(
    model: &SillModel,
    dataset: &Dataset,
    cfg: &TrainConfig,
) -> Result<(SillModel, ReconReport)> {
    cfg.validate()?;
    let n = dataset.len(Split::Train);
    if n == 0 {
        return Err(Error::Empty("training split".into()));
    }
    let mut model = model.clone();
    model.ensure_real_decoder();
    let mut adam = Adam::new(cfg.adam());
    let mut rng = stream_rng(cfg.seed, streams::RECON);
    let mut order: Vec<usize> = (0..n).collect();
    let mut report = ReconReport::default();

    for epoch in 0..cfg.epochs_recon {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let images: Vec<&Image> = chunk.iter().map(|&i| dataset.photo(Split::Train, i)).collect();
            let z = model.encode_batch(&images)?;
            let target = Image::batch(images.iter().copied())?;
            let dec = model.real_decoder.as_mut().expect("attached above");
            let (y, cache) = dec.forward(&z);
            let bce = bce_image_loss(y.data(), target.data())?;
            if !bce.value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    what: "real reconstruction loss".into(),
                });
            }
            sum += bce.value as f64;
            batches += 1;
            let g = Tensor::from_vec(y.shape(), bce.grad)?;
            dec.backward(&cache, &g, false);
            adam.step(dec);
        }
        let mean = sum / batches as f64;
        log::info!("real reconstruction epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}
