//! Minimal convolutional network engine, generic over the scalar type.

pub mod layers;
pub mod params;

pub use layers::{backward, forward, BatchNorm2d, Cache, Conv2d, Layer, Linear, Mode, Residual};
pub use params::{BufferId, BufferStore, Grads, ParamId, ParamStore, TensorStore};
