//! The five ways of combining multi-camera before/after images.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array2, ArrayD, Axis, Ix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backbone::{Backbone, BackboneFamily, BackboneSpec, LayerFactory};
use crate::dataset::example::Batch;
use crate::dataset::labels::{CameraView, Phase, ViewKey, NUM_ACTIONS, NUM_JOINT, NUM_TOOLS};
use crate::error::{Error, Result};
use crate::nn::{self, BufferStore, Cache, Grads, Layer, Mode, ParamId, ParamStore, TensorStore};
use crate::scalar::Scalar;
use crate::task::{HeadLayout, TaskSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FusionVariant {
    /// All six images stacked into one 18-channel input, one encoder.
    #[serde(rename = "stacked_3C1N")]
    Stacked3C1N,
    /// Six images through six independent encoders.
    #[serde(rename = "separate_3C6N")]
    Separate3C6N,
    /// One encoder per camera, shared between its initial and final image.
    #[serde(rename = "shared_3C3N")]
    Shared3C3N,
    /// Central camera only, independent encoders for initial and final.
    #[serde(rename = "separate_central_1C2N")]
    SeparateCentral1C2N,
    /// Central camera only, one encoder shared by initial and final.
    #[serde(rename = "shared_central_1C1N")]
    SharedCentral1C1N,
}

/// One encoder invocation: which views it consumes and which encoder runs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Slot {
    pub views: Vec<ViewKey>,
    pub encoder: usize,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::Stacked3C1N,
        FusionVariant::Separate3C6N,
        FusionVariant::Shared3C3N,
        FusionVariant::SeparateCentral1C2N,
        FusionVariant::SharedCentral1C1N,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            FusionVariant::Stacked3C1N => "3C-1N",
            FusionVariant::Separate3C6N => "3C-6N",
            FusionVariant::Shared3C3N => "3C-3N",
            FusionVariant::SeparateCentral1C2N => "1C-2N",
            FusionVariant::SharedCentral1C1N => "1C-1N",
        }
    }

    pub fn cli_name(self) -> &'static str {
        match self {
            FusionVariant::Stacked3C1N => "3c1n",
            FusionVariant::Separate3C6N => "3c6n",
            FusionVariant::Shared3C3N => "3c3n",
            FusionVariant::SeparateCentral1C2N => "1c2n",
            FusionVariant::SharedCentral1C1N => "1c1n",
        }
    }

    pub fn cameras(self) -> &'static [CameraView] {
        match self {
            FusionVariant::SeparateCentral1C2N | FusionVariant::SharedCentral1C1N => &[CameraView::Center],
            _ => &CameraView::ALL,
        }
    }

    /// Views consumed, in embedding concatenation order.
    pub fn views(self) -> Vec<ViewKey> {
        self.cameras()
            .iter()
            .flat_map(|&c| Phase::ALL.map(|p| ViewKey::new(c, p)))
            .collect()
    }

    pub fn num_encoders(self) -> usize {
        match self {
            FusionVariant::Stacked3C1N => 1,
            FusionVariant::Separate3C6N => 6,
            FusionVariant::Shared3C3N => 3,
            FusionVariant::SeparateCentral1C2N => 2,
            FusionVariant::SharedCentral1C1N => 1,
        }
    }

    pub fn is_shared(self) -> bool {
        matches!(self, FusionVariant::Shared3C3N | FusionVariant::SharedCentral1C1N)
    }

    pub fn input_channels(self) -> usize {
        match self {
            FusionVariant::Stacked3C1N => 3 * self.views().len(),
            _ => 3,
        }
    }

    pub fn slots(self) -> Vec<Slot> {
        let views = self.views();
        match self {
            FusionVariant::Stacked3C1N => vec![Slot { views, encoder: 0 }],
            FusionVariant::Separate3C6N | FusionVariant::SeparateCentral1C2N => views
                .into_iter()
                .enumerate()
                .map(|(i, v)| Slot {
                    views: vec![v],
                    encoder: i,
                })
                .collect(),
            FusionVariant::Shared3C3N | FusionVariant::SharedCentral1C1N => views
                .into_iter()
                .enumerate()
                .map(|(i, v)| Slot {
                    views: vec![v],
                    encoder: i / 2,
                })
                .collect(),
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for FusionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "");
        FusionVariant::ALL
            .into_iter()
            .find(|v| v.cli_name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FusionConfig {
    pub variant: FusionVariant,
    pub backbone: BackboneSpec,
    pub use_action_input: bool,
    pub head: HeadLayout,
}

impl FusionConfig {
    /// Configuration serving `task`, with the backbone's input channels set
    /// for the variant.
    pub fn for_task(variant: FusionVariant, backbone: BackboneSpec, task: TaskSpec) -> Self {
        FusionConfig {
            variant,
            backbone: backbone.with_input_channels(variant.input_channels()),
            use_action_input: task.uses_action_input(),
            head: task.head(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.backbone.input_channels != self.variant.input_channels() {
            return Err(Error::Config(format!(
                "{} needs {}-channel encoder input, backbone has {}",
                self.variant,
                self.variant.input_channels(),
                self.backbone.input_channels
            )));
        }
        if self.use_action_input && self.head != HeadLayout::ToolOnly {
            return Err(Error::Config(format!(
                "action input requires a tool-only head, not {}",
                self.head
            )));
        }
        Ok(())
    }

    /// Checks that this model configuration serves `task`.
    pub fn check_task(&self, task: TaskSpec) -> Result<()> {
        if self.head != task.head() || self.use_action_input != task.uses_action_input() {
            return Err(Error::Config(format!(
                "task {task} needs head {} with action input {}, model has head {} with action input {}",
                task.head(),
                task.uses_action_input(),
                self.head,
                self.use_action_input
            )));
        }
        Ok(())
    }

    pub fn embedding_width(&self) -> usize {
        self.variant.slots().len() * self.backbone.embedding_dim
    }

    /// Width of the vector fed to the classifier head(s).
    pub fn head_input_width(&self) -> usize {
        self.embedding_width() + if self.use_action_input { NUM_ACTIONS } else { 0 }
    }

    /// SHA-256 of the canonical JSON encoding; identifies the architecture.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Class scores for a batch, one matrix `(batch, classes)` per head.
#[derive(Clone, Debug, PartialEq)]
pub enum Logits<T> {
    Dual { tool: Array2<T>, action: Array2<T> },
    Joint16(Array2<T>),
    Tool(Array2<T>),
    Action(Array2<T>),
}

impl<T: Scalar> Logits<T> {
    pub fn layout(&self) -> HeadLayout {
        match self {
            Logits::Dual { .. } => HeadLayout::Dual,
            Logits::Joint16(_) => HeadLayout::Joint16,
            Logits::Tool(_) => HeadLayout::ToolOnly,
            Logits::Action(_) => HeadLayout::ActionOnly,
        }
    }

    pub fn heads(&self) -> Vec<&Array2<T>> {
        match self {
            Logits::Dual { tool, action } => vec![tool, action],
            Logits::Joint16(m) | Logits::Tool(m) | Logits::Action(m) => vec![m],
        }
    }

    pub fn from_heads(layout: HeadLayout, mut heads: Vec<Array2<T>>) -> Self {
        match layout {
            HeadLayout::Dual => {
                let action = heads.pop().expect("action head");
                let tool = heads.pop().expect("tool head");
                Logits::Dual { tool, action }
            }
            HeadLayout::Joint16 => Logits::Joint16(heads.remove(0)),
            HeadLayout::ToolOnly => Logits::Tool(heads.remove(0)),
            HeadLayout::ActionOnly => Logits::Action(heads.remove(0)),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.heads()[0].nrows()
    }
}

pub fn head_classes(layout: HeadLayout) -> Vec<(&'static str, usize)> {
    match layout {
        HeadLayout::Dual => vec![("tool", NUM_TOOLS), ("action", NUM_ACTIONS)],
        HeadLayout::Joint16 => vec![("joint16", NUM_JOINT)],
        HeadLayout::ToolOnly => vec![("tool", NUM_TOOLS)],
        HeadLayout::ActionOnly => vec![("action", NUM_ACTIONS)],
    }
}

/// Layer structure of a fusion model, separate from its parameter values.
#[derive(Clone, Debug)]
struct Arch {
    encoders: Vec<Backbone>,
    slots: Vec<Slot>,
    heads: Vec<Layer>,
}

/// Intermediate values recorded by a training-mode forward pass.
#[derive(Debug)]
pub struct ForwardCache<T> {
    encoders: Vec<Vec<Cache<T>>>,
    heads: Vec<Vec<Cache<T>>>,
}

impl<T> ForwardCache<T> {
    /// Number of encoder invocations during the pass.
    pub fn encoder_invocations(&self) -> usize {
        self.encoders.len()
    }
}

struct Pass<T> {
    logits: Logits<T>,
    embeddings: Vec<Array2<T>>,
    cache: Option<ForwardCache<T>>,
}

impl Arch {
    fn slot_input<T: Scalar>(&self, slot: &Slot, batch: &Batch<T>) -> Result<ArrayD<T>> {
        if slot.views.len() == 1 {
            return Ok(batch.views[&slot.views[0]].clone().into_dyn());
        }
        let parts: Vec<_> = slot.views.iter().map(|v| batch.views[v].view()).collect();
        concatenate(Axis(1), &parts)
            .map(|a| a.into_dyn())
            .map_err(|e| Error::Shape {
                key: "stacked".into(),
                msg: e.to_string(),
            })
    }

    fn run<T: Scalar>(
        &self,
        config: &FusionConfig,
        params: &ParamStore<T>,
        mode: &mut Mode<'_, T>,
        batch: &Batch<T>,
    ) -> Result<Pass<T>> {
        check_batch(config, batch)?;
        let train = mode.is_train();
        let mut embeddings = Vec::with_capacity(self.slots.len());
        let mut enc_caches = Vec::new();
        for slot in &self.slots {
            let x = self.slot_input(slot, batch)?;
            let (emb, caches) = self.encoders[slot.encoder].forward(params, mode, x)?;
            embeddings.push(emb);
            if train {
                enc_caches.push(caches);
            }
        }
        let mut parts: Vec<_> = embeddings.iter().map(|e| e.view()).collect();
        if let Some(a) = &batch.action {
            parts.push(a.view());
        }
        let features = concatenate(Axis(1), &parts).expect("embeddings share batch size");

        let mut head_out = Vec::with_capacity(self.heads.len());
        let mut head_caches = Vec::new();
        for head in &self.heads {
            let (y, c) = nn::forward(std::slice::from_ref(head), params, mode, features.clone().into_dyn(), "head")?;
            head_out.push(y.into_dimensionality::<Ix2>().expect("head output is 2-D"));
            if train {
                head_caches.push(c);
            }
        }
        Ok(Pass {
            logits: Logits::from_heads(config.head, head_out),
            embeddings,
            cache: train.then_some(ForwardCache {
                encoders: enc_caches,
                heads: head_caches,
            }),
        })
    }

    fn backward<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        cache: ForwardCache<T>,
        dlogits: &Logits<T>,
    ) -> Grads<T> {
        let mut grads = Grads::zeros_like(params);
        let mut dfeat: Option<Array2<T>> = None;
        for ((head, caches), dy) in self.heads.iter().zip(cache.heads).zip(dlogits.heads()) {
            let dx = nn::backward(std::slice::from_ref(head), params, &mut grads, caches, dy.clone().into_dyn(), true)
                .expect("head input gradient requested")
                .into_dimensionality::<Ix2>()
                .expect("head input is 2-D");
            dfeat = Some(match dfeat {
                Some(acc) => acc + dx,
                None => dx,
            });
        }
        let dfeat = dfeat.expect("at least one head");
        let mut offset = 0;
        for (slot, caches) in self.slots.iter().zip(cache.encoders) {
            let enc = &self.encoders[slot.encoder];
            let width = enc.embedding_dim();
            let d = dfeat.slice(s![.., offset..offset + width]).to_owned();
            enc.backward(params, &mut grads, caches, d);
            offset += width;
        }
        grads
    }
}

fn check_batch<T: Scalar>(config: &FusionConfig, batch: &Batch<T>) -> Result<()> {
    let expected: BTreeSet<ViewKey> = config.variant.views().into_iter().collect();
    for key in batch.views.keys() {
        if !expected.contains(key) {
            return Err(Error::Shape {
                key: key.to_string(),
                msg: format!("view not consumed by {}", config.variant),
            });
        }
    }
    let mut n = None;
    for key in &expected {
        let t = batch.views.get(key).ok_or_else(|| Error::Shape {
            key: key.to_string(),
            msg: format!("view required by {} is missing", config.variant),
        })?;
        if t.shape()[1] != 3 {
            return Err(Error::Shape {
                key: key.to_string(),
                msg: format!("expected 3 channels, got {}", t.shape()[1]),
            });
        }
        if *n.get_or_insert(t.shape()[0]) != t.shape()[0] {
            return Err(Error::Shape {
                key: key.to_string(),
                msg: "batch size differs between views".into(),
            });
        }
    }
    match (&batch.action, config.use_action_input) {
        (Some(a), true) if a.ncols() == NUM_ACTIONS && Some(a.nrows()) == n => Ok(()),
        (Some(a), true) => Err(Error::Shape {
            key: "action".into(),
            msg: format!("expected ({}, {NUM_ACTIONS}) one-hot, got {:?}", n.unwrap_or(0), a.shape()),
        }),
        (None, false) => Ok(()),
        (None, true) => Err(Error::Shape {
            key: "action".into(),
            msg: "model expects an action one-hot input".into(),
        }),
        (Some(_), false) => Err(Error::Shape {
            key: "action".into(),
            msg: "model takes no action input".into(),
        }),
    }
}

/// A fusion architecture together with its parameters and running statistics.
#[derive(Clone, Debug)]
pub struct FusionModel<T> {
    config: FusionConfig,
    arch: Arch,
    params: ParamStore<T>,
    buffers: BufferStore<T>,
}

/// Builds a freshly initialized model; all initial values derive from `seed`.
pub fn build_fusion_model<T: Scalar>(config: &FusionConfig, seed: u64) -> Result<FusionModel<T>> {
    config.validate()?;
    let mut params = TensorStore::new();
    let mut buffers = TensorStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factory = LayerFactory {
        params: &mut params,
        buffers: &mut buffers,
        rng: &mut rng,
    };
    let encoders = (0..config.variant.num_encoders())
        .map(|i| Backbone::build(&config.backbone, &format!("encoder{i}"), &mut factory))
        .collect::<Result<Vec<_>>>()?;
    let width = config.head_input_width();
    let heads = head_classes(config.head)
        .into_iter()
        .map(|(name, classes)| Layer::Linear(factory.linear(&format!("head.{name}"), width, classes)))
        .collect();
    Ok(FusionModel {
        config: config.clone(),
        arch: Arch {
            encoders,
            slots: config.variant.slots(),
            heads,
        },
        params,
        buffers,
    })
}

impl<T: Scalar> FusionModel<T> {
    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn buffers(&self) -> &BufferStore<T> {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut BufferStore<T> {
        &mut self.buffers
    }

    pub fn encoders(&self) -> &[Backbone] {
        &self.arch.encoders
    }

    pub fn slots(&self) -> &[Slot] {
        &self.arch.slots
    }

    /// Encoder that processes `view`.
    pub fn encoder_for(&self, view: ViewKey) -> Option<&Backbone> {
        self.arch
            .slots
            .iter()
            .find(|s| s.views.contains(&view))
            .map(|s| &self.arch.encoders[s.encoder])
    }

    /// Exact number of trainable scalars; aliased parameters count once.
    pub fn count_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Parameters that belong to the classifier head(s).
    pub fn head_param_ids(&self) -> Vec<ParamId> {
        let owned: BTreeSet<ParamId> = self
            .arch
            .encoders
            .iter()
            .flat_map(|e| e.param_ids().iter().copied())
            .collect();
        self.params.ids().filter(|id| !owned.contains(id)).collect()
    }

    /// Evaluation-mode forward pass (running batch-norm statistics).
    pub fn forward(&self, batch: &Batch<T>) -> Result<Logits<T>> {
        let pass = self
            .arch
            .run(&self.config, &self.params, &mut Mode::Eval(&self.buffers), batch)?;
        Ok(pass.logits)
    }

    /// Evaluation-mode per-slot embeddings, in concatenation order.
    pub fn embeddings(&self, batch: &Batch<T>) -> Result<Vec<Array2<T>>> {
        let pass = self
            .arch
            .run(&self.config, &self.params, &mut Mode::Eval(&self.buffers), batch)?;
        Ok(pass.embeddings)
    }

    /// Training-mode forward pass: batch statistics, running statistics
    /// updated, caches recorded for [`FusionModel::backward`].
    pub fn forward_train(&mut self, batch: &Batch<T>) -> Result<(Logits<T>, ForwardCache<T>)> {
        let pass = self
            .arch
            .run(&self.config, &self.params, &mut Mode::Train(&mut self.buffers), batch)?;
        Ok((pass.logits, pass.cache.expect("training pass records caches")))
    }

    /// Gradients of all parameters given the loss gradient w.r.t. the logits.
    pub fn backward(&self, cache: ForwardCache<T>, dlogits: &Logits<T>) -> Grads<T> {
        self.arch.backward(&self.params, cache, dlogits)
    }

    /// Replaces parameters and buffers with those of `other`, which must have
    /// the same configuration.
    pub fn load_state_from(&mut self, other: &FusionModel<T>) -> Result<()> {
        if self.config != other.config {
            return Err(Error::Config("cannot load state from a different architecture".into()));
        }
        self.params.load_from(&other.params).map_err(Error::Checkpoint)?;
        self.buffers.load_from(&other.buffers).map_err(Error::Checkpoint)
    }
}

/// A single encoder, optionally topped with a reference classifier.
#[derive(Clone, Debug)]
pub struct Encoder<T> {
    backbone: Backbone,
    head: Option<Layer>,
    params: ParamStore<T>,
    buffers: BufferStore<T>,
}

/// Builds one encoder with seeded initialization.
pub fn build_backbone<T: Scalar>(spec: &BackboneSpec, seed: u64) -> Result<Encoder<T>> {
    let mut params = TensorStore::new();
    let mut buffers = TensorStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut factory = LayerFactory {
        params: &mut params,
        buffers: &mut buffers,
        rng: &mut rng,
    };
    let backbone = Backbone::build(spec, "encoder", &mut factory)?;
    Ok(Encoder {
        backbone,
        head: None,
        params,
        buffers,
    })
}

impl<T: Scalar> Encoder<T> {
    /// Adds an affine classifier over the embedding, as in the reference
    /// ImageNet configuration (`classes = 1000`).
    pub fn with_reference_head(mut self, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(classes as u64);
        let mut factory = LayerFactory {
            params: &mut self.params,
            buffers: &mut self.buffers,
            rng: &mut rng,
        };
        let dim = self.backbone.embedding_dim();
        self.head = Some(Layer::Linear(factory.linear("fc", dim, classes)));
        self
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn count_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Embeddings (or reference-head scores) in evaluation mode.
    pub fn forward(&self, x: ArrayD<T>) -> Result<Array2<T>> {
        let mut mode = Mode::Eval(&self.buffers);
        let (emb, _) = self.backbone.forward(&self.params, &mut mode, x)?;
        match &self.head {
            None => Ok(emb),
            Some(head) => {
                let (y, _) = nn::forward(std::slice::from_ref(head), &self.params, &mut mode, emb.into_dyn(), "fc")?;
                Ok(y.into_dimensionality::<Ix2>().expect("2-D scores"))
            }
        }
    }

    /// Training-mode pass of the encoder alone followed by a backward pass of
    /// `upstream` (gradient w.r.t. the embedding).
    pub fn embedding_gradients(&mut self, x: ArrayD<T>, upstream: impl Fn(&Array2<T>) -> Array2<T>) -> Result<Grads<T>> {
        let (emb, caches) = self
            .backbone
            .forward(&self.params, &mut Mode::Train(&mut self.buffers), x)?;
        let dy = upstream(&emb);
        let mut grads = Grads::zeros_like(&self.params);
        self.backbone.backward(&self.params, &mut grads, caches, dy);
        Ok(grads)
    }
}

impl FusionConfig {
    /// Default configuration for `task` with a given backbone family.
    pub fn default_for(variant: FusionVariant, family: BackboneFamily, task: TaskSpec) -> Self {
        FusionConfig::for_task(variant, BackboneSpec::new(family), task)
    }
}
