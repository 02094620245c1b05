//! Epoch loop with best-validation model selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_and_grad;
use super::optim::{Adam, AdamSettings};
use crate::dataset::{BatchSource, LabelRecord};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{evaluate, predictions, Prediction};
use crate::models::FusionModel;
use crate::scalar::Scalar;
use crate::task::TaskSpec;

/// Learning rates searched when reproducing the reference protocol.
pub const LEARNING_RATES: [f64; 3] = [1e-3, 5e-4, 1e-4];
/// Batch sizes searched when reproducing the reference protocol.
pub const BATCH_SIZES: [usize; 4] = [16, 32, 64, 128];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamSettings,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 150,
            seed: 0,
            adam: AdamSettings::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Validation accuracies after one epoch. Absent heads are `None`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ValMetrics {
    pub tool: Option<f64>,
    pub action: Option<f64>,
    pub joint: Option<f64>,
}

impl ValMetrics {
    /// Metric used for model selection: joint accuracy when both tool and
    /// action are predicted, otherwise the single head's accuracy.
    pub fn selection(&self) -> f64 {
        self.joint.or(self.tool).or(self.action).unwrap_or(0.0)
    }

    /// A stub with only a selection value, for custom validators.
    pub fn scalar(value: f64) -> Self {
        ValMetrics {
            joint: Some(value),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val: ValMetrics,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 0-based index of the epoch with the highest validation accuracy; the
    /// earliest one wins ties.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.best_epoch.map(|i| &self.epochs[i])
    }

    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }

    /// CSV with columns `epoch,train_loss,train_acc,val_acc_tool,val_acc_action,val_acc_joint`.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        let mut out = String::from("epoch,train_loss,train_acc,val_acc_tool,val_acc_action,val_acc_joint\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{},{}\n",
                e.epoch,
                e.train_loss,
                e.train_accuracy,
                opt(e.val.tool),
                opt(e.val.action),
                opt(e.val.joint)
            ));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters from the best validation epoch.
    pub best: FusionModel<T>,
    /// Parameters after the last epoch.
    pub last: FusionModel<T>,
    pub history: TrainHistory,
}

fn correct(task: TaskSpec, p: &Prediction, l: &LabelRecord) -> bool {
    let tool = p.tool == Some(l.tool);
    let action = p.action == l.action;
    match task {
        TaskSpec::ToolsWithAction | TaskSpec::ToolsNoAction => tool,
        TaskSpec::ActionsOnly => action,
        TaskSpec::ToolsPlusActions | TaskSpec::Joint16 => tool && action,
    }
}

/// Shuffled epoch order, drawn from a stream reserved for data ordering so
/// that it never collides with initialization.
pub fn epoch_orders(n: usize, epochs: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    (0..epochs)
        .map(|_| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect()
}

/// One optimization step. Returns the batch loss and predictions.
pub fn train_step<T: Scalar>(
    model: &mut FusionModel<T>,
    optimizer: &mut Adam<T>,
    data: &dyn BatchSource<T>,
    indices: &[usize],
) -> Result<(f64, Vec<Prediction>, Vec<LabelRecord>)> {
    let (batch, labels) = data.batch(indices)?;
    let (logits, cache) = model.forward_train(&batch)?;
    let (loss, dlogits) = loss_and_grad(&logits, &labels)?;
    let loss = loss.as_f64();
    if !loss.is_finite() {
        return Err(Error::Numerical { layer: "loss".into() });
    }
    let grads = model.backward(cache, &dlogits);
    optimizer.step(model.params_mut(), &grads);
    Ok((loss, predictions(&logits), labels))
}

/// Trains on `train` for the full epoch budget, scoring every epoch with
/// `validate` and keeping the parameters of the best epoch.
pub fn train_with_validator<T, V>(
    model: FusionModel<T>,
    train: &dyn BatchSource<T>,
    config: &TrainConfig,
    task: TaskSpec,
    mut validate: V,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>>
where
    T: Scalar,
    V: FnMut(&FusionModel<T>, usize) -> Result<ValMetrics>,
{
    config.validate()?;
    model.config().check_task(task)?;
    if train.is_empty() {
        return Err(Error::Input("empty training set".into()));
    }
    let mut model = model;
    let mut optimizer = Adam::new(model.params(), config.learning_rate, config.adam);
    let mut history = TrainHistory::default();
    let mut best = model.clone();
    let mut best_score = f64::NEG_INFINITY;

    for (epoch, order) in epoch_orders(train.len(), config.epochs, config.seed).into_iter().enumerate() {
        let (mut loss_sum, mut hits, mut seen) = (0.0, 0usize, 0usize);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let diverged = |loss: f64| Error::Diverged { epoch, step, loss };
            let (loss, preds, labels) = match train_step(&mut model, &mut optimizer, train, chunk) {
                Ok(r) => r,
                Err(Error::Numerical { .. }) => return Err(diverged(f64::NAN)),
                Err(e) => return Err(e),
            };
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
            hits += preds.iter().zip(&labels).filter(|(p, l)| correct(task, p, l)).count();
        }
        let val = validate(&model, epoch)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            train_accuracy: hits as f64 / seen as f64,
            val,
        };
        on_epoch(&record);
        if val.selection() > best_score {
            best_score = val.selection();
            best = model.clone();
            history.best_epoch = Some(epoch);
        }
        history.epochs.push(record);
    }
    Ok(TrainOutcome {
        best,
        last: model,
        history,
    })
}

/// Validation metrics of `model` on `val`.
pub fn validation_metrics<T: Scalar>(model: &FusionModel<T>, val: &dyn BatchSource<T>, task: TaskSpec) -> Result<ValMetrics> {
    let r = evaluate(model, val, task)?;
    Ok(ValMetrics {
        tool: r.tool_accuracy,
        action: r.action_accuracy,
        joint: r.joint_accuracy,
    })
}

/// Trains with validation accuracy measured on `val` after every epoch.
pub fn train<T: Scalar>(
    model: FusionModel<T>,
    train: &dyn BatchSource<T>,
    val: &dyn BatchSource<T>,
    config: &TrainConfig,
    task: TaskSpec,
) -> Result<TrainOutcome<T>> {
    train_with_validator(model, train, config, task, |m, _| validation_metrics(m, val, task), |_| {})
}
