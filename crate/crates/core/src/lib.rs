pub mod baseline;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod losses;
pub mod model;
pub mod nn;
pub mod repository;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
