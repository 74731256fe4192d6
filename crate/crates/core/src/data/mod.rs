//! Datasets, the synthetic glyph benchmark and image transforms.

mod dataset;
mod image;
pub mod ops;
pub mod synthetic;
pub(crate) mod template;

pub use dataset::{load_image_folder, AccessLog, Dataset, FolderLoad, LabeledSample, Photo, Protocol, Split};
pub use image::Image;
pub use synthetic::{generate_synthetic_dataset, DeformKnobs, IlluminationKnobs, SyntheticConfig};
pub use template::{process_template, process_template_with, TemplateAug};
