//! Model inputs, label records and batching.

use std::collections::BTreeMap;

use ndarray::{stack, Array2, Array4, Axis};

use super::labels::{encode_action, joint_index, ViewKey, NUM_ACTIONS};
use super::manifest::{Dataset, Sample};
use super::preprocess::{load_resized, standardize, ImageCache, ImageTensor, NormStats};
use crate::error::{Error, Result};
use crate::models::FusionConfig;
use crate::scalar::Scalar;
use crate::task::TaskSpec;

/// Inputs for one sample: the views the fusion variant consumes, plus the
/// action one-hot when the task provides it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput<T> {
    pub views: BTreeMap<ViewKey, ImageTensor<T>>,
    pub action: Option<[T; NUM_ACTIONS]>,
}

/// Targets for one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LabelRecord {
    pub tool: usize,
    /// Present when the task predicts actions.
    pub action: Option<usize>,
    /// Present for the 16-way task.
    pub joint: Option<usize>,
}

/// A batch of model inputs: `(batch, 3, H, W)` per view.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub views: BTreeMap<ViewKey, Array4<T>>,
    pub action: Option<Array2<T>>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.views.values().next().map(|v| v.shape()[0]).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn check_compatible(task: TaskSpec, fusion: &FusionConfig) -> Result<()> {
    fusion.validate()?;
    fusion.check_task(task)
}

pub fn label_record(sample: &Sample, task: TaskSpec) -> LabelRecord {
    LabelRecord {
        tool: sample.tool.index(),
        action: task.predicts_actions().then(|| sample.action.index()),
        joint: (task == TaskSpec::Joint16).then(|| joint_index(sample.tool, sample.action)),
    }
}

fn action_input<T: Scalar>(sample: &Sample, task: TaskSpec) -> Option<[T; NUM_ACTIONS]> {
    task.uses_action_input()
        .then(|| encode_action(sample.action).map(|v| T::from_usize_lossy(v as usize)))
}

/// Reads the sample's images from disk and builds its model input and labels.
pub fn make_example<T: Scalar>(
    dataset: &Dataset,
    sample: &Sample,
    task: TaskSpec,
    fusion: &FusionConfig,
    stats: &NormStats,
) -> Result<(ModelInput<T>, LabelRecord)> {
    check_compatible(task, fusion)?;
    let views = fusion
        .variant
        .views()
        .into_iter()
        .map(|v| Ok((v, standardize(&load_resized(&dataset.image_path(sample, v))?, stats))))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok((
        ModelInput {
            views,
            action: action_input(sample, task),
        },
        label_record(sample, task),
    ))
}

/// Stacks single-sample inputs into a batch.
pub fn collate<T: Scalar>(inputs: &[&ModelInput<T>]) -> Result<Batch<T>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Input("cannot collate an empty batch".into()))?;
    let mut views = BTreeMap::new();
    for key in first.views.keys() {
        let parts = inputs
            .iter()
            .map(|i| {
                i.views.get(key).map(|t| t.view()).ok_or_else(|| Error::Shape {
                    key: key.to_string(),
                    msg: "view missing from some samples".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stacked = stack(Axis(0), &parts).map_err(|e| Error::Shape {
            key: key.to_string(),
            msg: e.to_string(),
        })?;
        views.insert(*key, stacked);
    }
    let action = match first.action {
        None => None,
        Some(_) => {
            let mut m = Array2::zeros((inputs.len(), NUM_ACTIONS));
            for (r, i) in inputs.iter().enumerate() {
                let a = i.action.ok_or_else(|| Error::Shape {
                    key: "action".into(),
                    msg: "one-hot missing from some samples".into(),
                })?;
                for (c, v) in a.iter().enumerate() {
                    m[[r, c]] = *v;
                }
            }
            Some(m)
        }
    };
    Ok(Batch { views, action })
}

/// Anything that can hand out labelled batches by sample index.
pub trait BatchSource<T: Scalar>: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn batch(&self, indices: &[usize]) -> Result<(Batch<T>, Vec<LabelRecord>)>;
}

/// Fully materialized examples.
#[derive(Clone, Debug, Default)]
pub struct ExampleSet<T> {
    pub examples: Vec<(ModelInput<T>, LabelRecord)>,
}

impl<T: Scalar> ExampleSet<T> {
    pub fn new(examples: Vec<(ModelInput<T>, LabelRecord)>) -> Self {
        ExampleSet { examples }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        ExampleSet {
            examples: indices.iter().map(|&i| self.examples[i].clone()).collect(),
        }
    }
}

impl<T: Scalar> BatchSource<T> for ExampleSet<T> {
    fn len(&self) -> usize {
        self.examples.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<(Batch<T>, Vec<LabelRecord>)> {
        let inputs: Vec<_> = indices.iter().map(|&i| &self.examples[i].0).collect();
        let labels = indices.iter().map(|&i| self.examples[i].1).collect();
        Ok((collate(&inputs)?, labels))
    }
}

/// Examples standardized on demand from cached resized images.
#[derive(Clone, Debug)]
pub struct CachedExamples<'a> {
    pub dataset: &'a Dataset,
    pub cache: &'a ImageCache,
    pub task: TaskSpec,
    pub fusion: FusionConfig,
    pub stats: NormStats,
}

impl<'a> CachedExamples<'a> {
    pub fn new(
        dataset: &'a Dataset,
        cache: &'a ImageCache,
        task: TaskSpec,
        fusion: &FusionConfig,
        stats: NormStats,
    ) -> Result<Self> {
        check_compatible(task, fusion)?;
        if cache.len() != dataset.len() {
            return Err(Error::Input("image cache does not match dataset".into()));
        }
        for v in fusion.variant.views() {
            if !cache.views().contains(&v) {
                return Err(Error::Shape {
                    key: v.to_string(),
                    msg: "view not cached".into(),
                });
            }
        }
        Ok(CachedExamples {
            dataset,
            cache,
            task,
            fusion: fusion.clone(),
            stats,
        })
    }

    pub fn example<T: Scalar>(&self, index: usize) -> (ModelInput<T>, LabelRecord) {
        let sample = &self.dataset.samples()[index];
        let views = self
            .fusion
            .variant
            .views()
            .into_iter()
            .map(|v| (v, standardize(self.cache.get(index, v).expect("view cached"), &self.stats)))
            .collect();
        (
            ModelInput {
                views,
                action: action_input(sample, self.task),
            },
            label_record(sample, self.task),
        )
    }
}

impl<T: Scalar> BatchSource<T> for CachedExamples<'_> {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn batch(&self, indices: &[usize]) -> Result<(Batch<T>, Vec<LabelRecord>)> {
        let examples: Vec<(ModelInput<T>, LabelRecord)> = indices.iter().map(|&i| self.example(i)).collect();
        let inputs: Vec<_> = examples.iter().map(|e| &e.0).collect();
        Ok((collate(&inputs)?, examples.iter().map(|e| e.1).collect()))
    }
}
