//! Encoders and multi-camera fusion architectures.

pub mod backbone;
pub mod checkpoint;
pub mod fusion;

pub use backbone::{Backbone, BackboneFamily, BackboneSpec};
pub use checkpoint::{load_checkpoint, read_checkpoint_header, save_checkpoint, Checkpoint};
pub use fusion::{build_backbone, build_fusion_model, Encoder, ForwardCache, FusionConfig, FusionModel, FusionVariant, Logits, Slot};
