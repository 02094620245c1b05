//! Learning which tool, and which action, moved an object from before/after
//! egocentric camera images.

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod scalar;
pub mod synthgen;
pub mod task;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use task::{HeadLayout, TaskSpec};

pub type FusionModelF32 = models::FusionModel<f32>;
pub type FusionModelF64 = models::FusionModel<f64>;
pub type BatchF32 = dataset::Batch<f32>;
pub type BatchF64 = dataset::Batch<f64>;
