//! Learnable networks and their single-item forward contracts.

mod checkpoint;
pub mod networks;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use networks::{Classifier, Decoder, Encoder, Localizer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Image;
use crate::error::{Error, Result};
use crate::nn::{join, Module, Param, TensorKind};
use crate::tensor::Tensor;

/// Architecture hyperparameters. Serialized into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Channels per half of the split feature grid.
    #[serde(rename = "C")]
    pub channels: usize,
    pub image_size: usize,
    /// Number of classes over train and test splits together.
    #[serde(rename = "M")]
    pub classes: usize,
    pub seed: u64,
    #[serde(default = "defaults::encoder_width")]
    pub encoder_width: usize,
    #[serde(default = "defaults::decoder_width")]
    pub decoder_width: usize,
    #[serde(default = "defaults::localizer_width")]
    pub localizer_width: usize,
    #[serde(default = "defaults::classifier_widths")]
    pub classifier_widths: (usize, usize),
}

mod defaults {
    pub fn encoder_width() -> usize {
        32
    }
    pub fn decoder_width() -> usize {
        32
    }
    pub fn localizer_width() -> usize {
        16
    }
    pub fn classifier_widths() -> (usize, usize) {
        (32, 64)
    }
}

impl ModelConfig {
    /// Full-size defaults: 32x32 images and 32 channels per half.
    pub fn new(classes: usize) -> Self {
        Self {
            channels: 32,
            image_size: 32,
            classes,
            seed: 0,
            encoder_width: defaults::encoder_width(),
            decoder_width: defaults::decoder_width(),
            localizer_width: defaults::localizer_width(),
            classifier_widths: defaults::classifier_widths(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("C", self.channels),
            ("image_size", self.image_size),
            ("M", self.classes),
            ("encoder_width", self.encoder_width),
            ("decoder_width", self.decoder_width),
            ("localizer_width", self.localizer_width),
            ("classifier_widths.0", self.classifier_widths.0),
            ("classifier_widths.1", self.classifier_widths.1),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// A `channels x height x width` grid of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} grid needs {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn from_tensor_item(t: &Tensor, n: usize) -> Self {
        let (_, c, h, w) = t.dims4();
        Self {
            channels: c,
            height: h,
            width: w,
            values: t.item(n).to_vec(),
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[1, self.channels, self.height, self.width], self.values.clone())
            .expect("grid length checked at construction")
    }

    pub fn stack<'a>(grids: impl IntoIterator<Item = &'a FeatureGrid>) -> Result<Tensor> {
        let grids: Vec<&FeatureGrid> = grids.into_iter().collect();
        let first = grids.first().ok_or_else(|| Error::Empty("feature batch".into()))?;
        let shape = [first.channels, first.height, first.width];
        Tensor::stack(&shape, grids.iter().map(|g| g.values.as_slice()))
    }

    /// Euclidean distance over the flattened grids.
    pub fn l2_distance(&self, other: &FeatureGrid) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Encoder output split along channels into semantic and illumination halves.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFeature {
    pub sem: FeatureGrid,
    pub illu: FeatureGrid,
}

impl SplitFeature {
    pub fn new(sem: FeatureGrid, illu: FeatureGrid) -> Result<Self> {
        if sem.shape() != illu.shape() {
            return Err(Error::Shape(format!(
                "semantic half {:?} and illumination half {:?} differ",
                sem.shape(),
                illu.shape()
            )));
        }
        Ok(Self { sem, illu })
    }

    /// Splits item `n` of a `[N, 2C, H, W]` tensor.
    pub fn from_tensor_item(z: &Tensor, n: usize) -> Self {
        let (_, c2, h, w) = z.dims4();
        let c = c2 / 2;
        let item = z.item(n);
        let half = c * h * w;
        Self {
            sem: FeatureGrid {
                channels: c,
                height: h,
                width: w,
                values: item[..half].to_vec(),
            },
            illu: FeatureGrid {
                channels: c,
                height: h,
                width: w,
                values: item[half..].to_vec(),
            },
        }
    }

    /// The concatenated `2C`-channel grid.
    pub fn concat(&self) -> FeatureGrid {
        let mut values = self.sem.values.clone();
        values.extend_from_slice(&self.illu.values);
        FeatureGrid {
            channels: self.sem.channels * 2,
            height: self.sem.height,
            width: self.sem.width,
            values,
        }
    }
}

/// Row-major 2x3 affine map in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineParams(pub [f32; 6]);

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams(Localizer::IDENTITY);

    /// Pure translation by `(dx, dy)` in normalized units.
    pub fn translation(dx: f32, dy: f32) -> Self {
        AffineParams([1.0, 0.0, dx, 0.0, 1.0, dy])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The full parameter bundle.
#[derive(Debug, Clone)]
pub struct SillModel {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub localizer: Localizer,
    pub template_decoder: Decoder,
    pub classifier: Classifier,
    pub real_decoder: Option<Decoder>,
    /// Set once the classifier has been trained for the evaluation classes.
    pub classifier_ready: bool,
}

impl SillModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let encoder = Encoder::new(2 * c, config.encoder_width, &mut rng);
        let localizer = Localizer::new(c, config.localizer_width, &mut rng);
        let template_decoder = Decoder::new(c, config.decoder_width, &mut rng);
        let classifier = Classifier::new(c, config.classifier_widths, config.classes, &mut rng);
        Ok(Self {
            config,
            encoder,
            localizer,
            template_decoder,
            classifier,
            real_decoder: None,
            classifier_ready: false,
        })
    }

    /// Attaches a freshly initialized real-image decoder if none exists.
    pub fn ensure_real_decoder(&mut self) -> &mut Decoder {
        let (c, width, seed) = (
            self.config.channels,
            self.config.decoder_width,
            self.config.seed,
        );
        self.real_decoder.get_or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_dec0de);
            Decoder::new(2 * c, width, &mut rng)
        })
    }

    pub fn channels(&self) -> usize {
        self.config.channels
    }

    fn check_image(&self, image: &Image) -> Result<()> {
        let s = self.config.image_size;
        if image.width() != s || image.height() != s {
            return Err(Error::Shape(format!(
                "image is {}x{}, model expects {s}x{s}",
                image.width(),
                image.height()
            )));
        }
        if !image.is_finite() {
            return Err(Error::NonFinite("input image".into()));
        }
        Ok(())
    }

    fn check_grid(&self, grid: &FeatureGrid, channels: usize, what: &str) -> Result<()> {
        let s = self.config.image_size;
        if grid.channels != channels || grid.height != s || grid.width != s {
            return Err(Error::Shape(format!(
                "{what} is {:?}, expected ({channels}, {s}, {s})",
                grid.shape()
            )));
        }
        Ok(())
    }

    /// Encodes a batch of validated images with inference-mode normalization.
    pub fn encode_batch(&self, images: &[&Image]) -> Result<Tensor> {
        for im in images {
            self.check_image(im)?;
        }
        let x = Image::batch(images.iter().copied())?;
        Ok(self.encoder.forward_eval(&x))
    }

    pub fn encode(&self, image: &Image) -> Result<SplitFeature> {
        let z = self.encode_batch(&[image])?;
        Ok(SplitFeature::from_tensor_item(&z, 0))
    }

    /// Resamples `sem` under the localizer's predicted map.
    pub fn rectify(&self, sem: &FeatureGrid) -> Result<(FeatureGrid, AffineParams)> {
        self.check_grid(sem, self.channels(), "semantic grid")?;
        let x = sem.to_tensor();
        let theta = self.localizer.predict(&x);
        let params = AffineParams(theta.item(0).try_into().expect("six coefficients"));
        if !params.is_finite() {
            return Err(Error::NonFinite("predicted affine parameters".into()));
        }
        Ok((rectify_with(sem, params)?, params))
    }

    pub fn reconstruct_template(&self, rectified_sem: &FeatureGrid) -> Result<Image> {
        self.check_grid(rectified_sem, self.channels(), "rectified semantic grid")?;
        let (y, _) = self.template_decoder.forward(&rectified_sem.to_tensor());
        Ok(Image::from_tensor_item(&y, 0))
    }

    /// Logits over all `M` classes.
    pub fn classify(&self, mixed: &FeatureGrid) -> Result<Vec<f32>> {
        self.check_grid(mixed, self.channels(), "classifier input")?;
        Ok(self.classify_batch(&mixed.to_tensor()).into_data())
    }

    pub fn classify_batch(&self, mixed: &Tensor) -> Tensor {
        self.classifier.forward(mixed).0
    }

    pub fn reconstruct_real(&self, split: &SplitFeature) -> Result<Image> {
        let c = self.channels();
        self.check_grid(&split.sem, c, "semantic half")?;
        self.check_grid(&split.illu, c, "illumination half")?;
        let dec = self
            .real_decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model has no real-image decoder".into()))?;
        let (y, _) = dec.forward(&split.concat().to_tensor());
        Ok(Image::from_tensor_item(&y, 0))
    }
}

/// Resamples a grid under fixed affine parameters.
pub fn rectify_with(sem: &FeatureGrid, params: AffineParams) -> Result<FeatureGrid> {
    if !params.is_finite() {
        return Err(Error::NonFinite("affine parameters".into()));
    }
    let theta = Tensor::from_vec(&[1, 6], params.0.to_vec())?;
    let y = crate::nn::affine_grid_sample(&sem.to_tensor(), &theta);
    Ok(FeatureGrid::from_tensor_item(&y, 0))
}

impl Module for SillModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, TensorKind, &mut Param)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.localizer.visit(&join(prefix, "localizer"), f);
        self.template_decoder.visit(&join(prefix, "template_decoder"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
        if let Some(d) = self.real_decoder.as_mut() {
            d.visit(&join(prefix, "real_decoder"), f);
        }
    }
}
