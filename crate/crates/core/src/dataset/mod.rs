//! Manifests, splits, preprocessing and model-ready examples.

pub mod example;
pub mod labels;
pub mod manifest;
pub mod preprocess;
pub mod split;

pub use example::{collate, make_example, Batch, BatchSource, CachedExamples, ExampleSet, LabelRecord, ModelInput};
pub use labels::{decode_action, encode_action, joint_index, Action, CameraView, Phase, Tool, ViewKey};
pub use manifest::{load_manifest, write_manifest, Dataset, Sample, SampleKey};
pub use preprocess::{preprocess_image, ImageCache, ImageTensor, NormStats, IMAGE_SIZE};
pub use split::{load_splits, split_dataset, write_splits, Partition, SplitSidecar, SplitSpec, Splits};
