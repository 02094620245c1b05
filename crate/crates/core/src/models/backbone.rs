//! Image encoders: residual networks and a small plain CNN for fast tests.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayD, Ix2, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::params::{fan_in_uniform, he_normal};
use crate::nn::{self, BatchNorm2d, BufferStore, Cache, Conv2d, Grads, Layer, Linear, Mode, ParamId, ParamStore, Residual};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    Resnet18,
    Resnet50,
    Resnet101,
    Tiny,
}

impl BackboneFamily {
    pub const ALL: [BackboneFamily; 4] = [
        BackboneFamily::Resnet18,
        BackboneFamily::Resnet50,
        BackboneFamily::Resnet101,
        BackboneFamily::Tiny,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneFamily::Resnet18 => "resnet18",
            BackboneFamily::Resnet50 => "resnet50",
            BackboneFamily::Resnet101 => "resnet101",
            BackboneFamily::Tiny => "tiny",
        }
    }

    /// Width of the feature vector the encoder produces by default.
    pub fn default_embedding_dim(self) -> usize {
        match self {
            BackboneFamily::Resnet18 => 512,
            BackboneFamily::Resnet50 | BackboneFamily::Resnet101 => 2048,
            BackboneFamily::Tiny => 64,
        }
    }
}

impl fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackboneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackboneFamily::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown backbone family `{s}`")))
    }
}

/// Tiny-family base width (channels of the first block).
pub const TINY_DEFAULT_WIDTH: usize = 8;
/// The tiny encoder pools its last feature map to this grid before the
/// projection, so spatial layout survives into the embedding.
pub const TINY_POOL_GRID: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    pub first_block_kernel: usize,
    pub first_block_stride: usize,
    pub input_channels: usize,
    pub embedding_dim: usize,
    /// Base channel width; only the tiny family honours it.
    pub width: usize,
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily) -> Self {
        BackboneSpec {
            family,
            first_block_kernel: if family == BackboneFamily::Tiny { 3 } else { 7 },
            first_block_stride: 2,
            input_channels: 3,
            embedding_dim: family.default_embedding_dim(),
            width: if family == BackboneFamily::Tiny { TINY_DEFAULT_WIDTH } else { 64 },
        }
    }

    pub fn with_first_block(mut self, kernel: usize, stride: usize) -> Self {
        self.first_block_kernel = kernel;
        self.first_block_stride = stride;
        self
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    /// Tiny family only: base width and embedding width.
    pub fn with_tiny_size(mut self, width: usize, embedding_dim: usize) -> Self {
        self.width = width;
        self.embedding_dim = embedding_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if ![3, 5, 7].contains(&self.first_block_kernel) {
            return Err(Error::Config(format!(
                "first-block kernel must be 3, 5 or 7, got {}",
                self.first_block_kernel
            )));
        }
        if ![1, 2].contains(&self.first_block_stride) {
            return Err(Error::Config(format!(
                "first-block stride must be 1 or 2, got {}",
                self.first_block_stride
            )));
        }
        if ![3, 18].contains(&self.input_channels) {
            return Err(Error::Config(format!(
                "input channels must be 3 or 18, got {}",
                self.input_channels
            )));
        }
        if self.embedding_dim == 0 || self.width == 0 {
            return Err(Error::Config("embedding dim and width must be positive".into()));
        }
        if self.family != BackboneFamily::Tiny && self.embedding_dim != self.family.default_embedding_dim() {
            return Err(Error::Config(format!(
                "{} produces {}-wide embeddings, not {}",
                self.family,
                self.family.default_embedding_dim(),
                self.embedding_dim
            )));
        }
        Ok(())
    }
}

/// Allocates parameters for layers under a name prefix.
pub(crate) struct LayerFactory<'a, T, R: ?Sized> {
    pub params: &'a mut ParamStore<T>,
    pub buffers: &'a mut BufferStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng + ?Sized> LayerFactory<'_, T, R> {
    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize, stride: usize, padding: usize) -> Layer {
        let fan_in = cin * kernel * kernel;
        let weight = self.params.add_param(
            format!("{name}.weight"),
            he_normal(&[cout, cin, kernel, kernel], fan_in, self.rng),
        );
        Layer::Conv(Conv2d {
            name: name.to_string(),
            weight,
            bias: None,
            in_channels: cin,
            out_channels: cout,
            kernel,
            stride,
            padding,
        })
    }

    pub fn bn(&mut self, name: &str, channels: usize) -> Layer {
        let gamma = self
            .params
            .add_param(format!("{name}.weight"), ArrayD::ones(IxDyn(&[channels])));
        let beta = self
            .params
            .add_param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[channels])));
        let running_mean = self
            .buffers
            .add_buffer(format!("{name}.running_mean"), ArrayD::zeros(IxDyn(&[channels])));
        let running_var = self
            .buffers
            .add_buffer(format!("{name}.running_var"), ArrayD::ones(IxDyn(&[channels])));
        Layer::BatchNorm(BatchNorm2d {
            name: name.to_string(),
            gamma,
            beta,
            running_mean,
            running_var,
            channels,
        })
    }

    /// Affine layer with fan-in uniform weights and zero bias.
    pub fn linear(&mut self, name: &str, input: usize, output: usize) -> Linear {
        let weight = self
            .params
            .add_param(format!("{name}.weight"), fan_in_uniform(&[output, input], input, self.rng));
        let bias = self
            .params
            .add_param(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[output])));
        Linear {
            name: name.to_string(),
            weight,
            bias,
            in_features: input,
            out_features: output,
        }
    }

    fn basic_block(&mut self, name: &str, cin: usize, planes: usize, stride: usize) -> Layer {
        let main = vec![
            self.conv(&format!("{name}.conv1"), cin, planes, 3, stride, 1),
            self.bn(&format!("{name}.bn1"), planes),
            Layer::Relu,
            self.conv(&format!("{name}.conv2"), planes, planes, 3, 1, 1),
            self.bn(&format!("{name}.bn2"), planes),
        ];
        let shortcut = (stride != 1 || cin != planes).then(|| {
            vec![
                self.conv(&format!("{name}.downsample.0"), cin, planes, 1, stride, 0),
                self.bn(&format!("{name}.downsample.1"), planes),
            ]
        });
        Layer::Residual(Box::new(Residual {
            name: name.to_string(),
            main,
            shortcut,
        }))
    }

    fn bottleneck(&mut self, name: &str, cin: usize, planes: usize, stride: usize) -> Layer {
        let out = planes * 4;
        let main = vec![
            self.conv(&format!("{name}.conv1"), cin, planes, 1, 1, 0),
            self.bn(&format!("{name}.bn1"), planes),
            Layer::Relu,
            self.conv(&format!("{name}.conv2"), planes, planes, 3, stride, 1),
            self.bn(&format!("{name}.bn2"), planes),
            Layer::Relu,
            self.conv(&format!("{name}.conv3"), planes, out, 1, 1, 0),
            self.bn(&format!("{name}.bn3"), out),
        ];
        let shortcut = (stride != 1 || cin != out).then(|| {
            vec![
                self.conv(&format!("{name}.downsample.0"), cin, out, 1, stride, 0),
                self.bn(&format!("{name}.downsample.1"), out),
            ]
        });
        Layer::Residual(Box::new(Residual {
            name: name.to_string(),
            main,
            shortcut,
        }))
    }
}

/// An encoder mapping `input_channels × H × W` images to embeddings.
#[derive(Clone, Debug)]
pub struct Backbone {
    spec: BackboneSpec,
    name: String,
    layers: Vec<Layer>,
    param_ids: Vec<ParamId>,
}

impl Backbone {
    pub(crate) fn build<T: Scalar, R: Rng + ?Sized>(
        spec: &BackboneSpec,
        name: &str,
        factory: &mut LayerFactory<'_, T, R>,
    ) -> Result<Self> {
        spec.validate()?;
        let first = factory.params.len();
        let k = spec.first_block_kernel;
        let s = spec.first_block_stride;
        let layers = match spec.family {
            BackboneFamily::Tiny => {
                let w = spec.width;
                let widths = [w, 2 * w, 4 * w, 4 * w];
                let mut layers = Vec::new();
                let mut cin = spec.input_channels;
                for (i, &cout) in widths.iter().enumerate() {
                    let (kk, ss) = if i == 0 { (k, s) } else { (3, 2) };
                    layers.push(factory.conv(&format!("{name}.block{i}.conv"), cin, cout, kk, ss, kk / 2));
                    layers.push(factory.bn(&format!("{name}.block{i}.bn"), cout));
                    layers.push(Layer::Relu);
                    cin = cout;
                }
                layers.push(Layer::AdaptiveAvgPool { out: TINY_POOL_GRID });
                layers.push(Layer::Flatten);
                let flat = cin * TINY_POOL_GRID * TINY_POOL_GRID;
                layers.push(Layer::Linear(factory.linear(&format!("{name}.proj"), flat, spec.embedding_dim)));
                layers
            }
            family => {
                let (bottleneck, depths): (bool, [usize; 4]) = match family {
                    BackboneFamily::Resnet18 => (false, [2, 2, 2, 2]),
                    BackboneFamily::Resnet50 => (true, [3, 4, 6, 3]),
                    BackboneFamily::Resnet101 => (true, [3, 4, 23, 3]),
                    BackboneFamily::Tiny => unreachable!(),
                };
                let mut layers = vec![
                    factory.conv(&format!("{name}.conv1"), spec.input_channels, 64, k, s, k / 2),
                    factory.bn(&format!("{name}.bn1"), 64),
                    Layer::Relu,
                    Layer::MaxPool {
                        kernel: 3,
                        stride: 2,
                        padding: 1,
                    },
                ];
                let mut cin = 64;
                for (stage, (&depth, planes)) in depths.iter().zip([64, 128, 256, 512]).enumerate() {
                    for b in 0..depth {
                        let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                        let block_name = format!("{name}.layer{}.{b}", stage + 1);
                        if bottleneck {
                            layers.push(factory.bottleneck(&block_name, cin, planes, stride));
                            cin = planes * 4;
                        } else {
                            layers.push(factory.basic_block(&block_name, cin, planes, stride));
                            cin = planes;
                        }
                    }
                }
                layers.push(Layer::AdaptiveAvgPool { out: 1 });
                layers
            }
        };
        let param_ids = (first..factory.params.len()).map(ParamId).collect();
        Ok(Backbone {
            spec: spec.clone(),
            name: name.to_string(),
            layers,
            param_ids,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim
    }

    /// Parameters owned by this encoder, in creation order.
    pub fn param_ids(&self) -> &[ParamId] {
        &self.param_ids
    }

    pub fn has_skip_connections(&self) -> bool {
        self.layers.iter().any(|l| matches!(l, Layer::Residual(_)))
    }

    pub fn forward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        mode: &mut Mode<'_, T>,
        x: ArrayD<T>,
    ) -> Result<(Array2<T>, Vec<Cache<T>>)> {
        let shape = x.shape().to_vec();
        if shape.len() != 4 || shape[1] != self.spec.input_channels {
            return Err(Error::Shape {
                key: self.name.clone(),
                msg: format!(
                    "expected (batch, {}, H, W) input, got {shape:?}",
                    self.spec.input_channels
                ),
            });
        }
        let (y, caches) = nn::forward(&self.layers, params, mode, x, &self.name)?;
        let y = y.into_dimensionality::<Ix2>().map_err(|_| Error::Shape {
            key: self.name.clone(),
            msg: "encoder did not produce a flat embedding".into(),
        })?;
        Ok((y, caches))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        grads: &mut Grads<T>,
        caches: Vec<Cache<T>>,
        dy: Array2<T>,
    ) {
        nn::backward(&self.layers, params, grads, caches, dy.into_dyn(), false);
    }
}
