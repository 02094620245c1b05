//! Accuracy and confusion matrices on a labelled test set.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::labels::{split_joint_index, Action, Tool, NUM_ACTIONS, NUM_JOINT, NUM_TOOLS};
use crate::dataset::{BatchSource, LabelRecord};
use crate::error::{Error, Result};
use crate::models::{FusionModel, Logits};
use crate::scalar::Scalar;
use crate::task::TaskSpec;

/// Predicted classes for one sample. A 16-way prediction also fills in the
/// tool and action it decodes to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Prediction {
    pub tool: Option<usize>,
    pub action: Option<usize>,
    pub joint: Option<usize>,
}

fn argmax<T: Scalar>(row: ndarray::ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predictions<T: Scalar>(logits: &Logits<T>) -> Vec<Prediction> {
    let rows = |m: &Array2<T>| m.rows().into_iter().map(argmax).collect::<Vec<_>>();
    match logits {
        Logits::Dual { tool, action } => rows(tool)
            .into_iter()
            .zip(rows(action))
            .map(|(t, a)| Prediction {
                tool: Some(t),
                action: Some(a),
                joint: None,
            })
            .collect(),
        Logits::Joint16(m) => rows(m)
            .into_iter()
            .map(|j| {
                let (t, a) = split_joint_index(j);
                Prediction {
                    tool: Some(t),
                    action: Some(a),
                    joint: Some(j),
                }
            })
            .collect(),
        Logits::Tool(m) => rows(m)
            .into_iter()
            .map(|t| Prediction {
                tool: Some(t),
                ..Default::default()
            })
            .collect(),
        Logits::Action(m) => rows(m)
            .into_iter()
            .map(|a| Prediction {
                action: Some(a),
                ..Default::default()
            })
            .collect(),
    }
}

/// Entry `(i, j)` counts samples of true class `i` predicted as `j`. With
/// `row_normalize`, each row with support is divided by its sum; rows
/// without support stay zero.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    n_classes: usize,
    row_normalize: bool,
) -> Result<Array2<f64>> {
    if predictions.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = Array2::<f64>::zeros((n_classes, n_classes));
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(Error::Input(format!(
                "class index {} out of range for {n_classes} classes",
                p.max(l)
            )));
        }
        m[[l, p]] += 1.0;
    }
    if row_normalize {
        for mut row in m.rows_mut() {
            let s = row.sum();
            if s > 0.0 {
                row /= s;
            }
        }
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfusionReport {
    /// `tool`, `action` or `joint16`.
    pub head: String,
    pub classes: Vec<String>,
    pub counts: Vec<Vec<usize>>,
    pub normalized: Vec<Vec<f64>>,
}

impl ConfusionReport {
    fn build(head: &str, classes: Vec<String>, preds: &[usize], labels: &[usize]) -> Result<Self> {
        let n = classes.len();
        let counts = confusion_matrix(preds, labels, n, false)?;
        let normalized = confusion_matrix(preds, labels, n, true)?;
        Ok(ConfusionReport {
            head: head.to_string(),
            classes,
            counts: counts
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|&v| v as usize).collect())
                .collect(),
            normalized: normalized.rows().into_iter().map(|r| r.to_vec()).collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: TaskSpec,
    pub config_hash: Option<String>,
    pub samples: usize,
    pub tool_accuracy: Option<f64>,
    pub action_accuracy: Option<f64>,
    /// Fraction with both tool and action correct (tool+action and 16-way tasks).
    pub joint_accuracy: Option<f64>,
    pub confusion: Vec<ConfusionReport>,
}

impl EvalReport {
    /// The single number reported for the task: joint accuracy where both
    /// tool and action are predicted, otherwise the one head's accuracy.
    pub fn headline(&self) -> f64 {
        self.joint_accuracy
            .or(self.tool_accuracy)
            .or(self.action_accuracy)
            .expect("every task reports an accuracy")
    }
}

fn class_names(n: usize) -> Vec<String> {
    match n {
        NUM_TOOLS => Tool::ALL.iter().map(|t| t.name().to_string()).collect(),
        _ => Tool::ALL
            .iter()
            .flat_map(|t| Action::ALL.iter().map(move |a| format!("{t}/{a}")))
            .collect(),
    }
}

/// Scores predictions against labels for `task`.
pub fn evaluate_predictions(task: TaskSpec, preds: &[Prediction], labels: &[LabelRecord]) -> Result<EvalReport> {
    if labels.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    if preds.len() != labels.len() {
        return Err(Error::Evaluation(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let n = labels.len() as f64;
    let missing = |what: &str| Error::Evaluation(format!("prediction lacks a {what}"));

    let mut report = EvalReport {
        task,
        config_hash: None,
        samples: labels.len(),
        tool_accuracy: None,
        action_accuracy: None,
        joint_accuracy: None,
        confusion: Vec::new(),
    };

    let predicts_tools = task != TaskSpec::ActionsOnly;
    let tool_pairs = if predicts_tools {
        let p = preds.iter().map(|p| p.tool.ok_or_else(|| missing("tool"))).collect::<Result<Vec<_>>>()?;
        let l: Vec<usize> = labels.iter().map(|l| l.tool).collect();
        Some((p, l))
    } else {
        None
    };
    let action_pairs = if task.predicts_actions() {
        let p = preds.iter().map(|p| p.action.ok_or_else(|| missing("action"))).collect::<Result<Vec<_>>>()?;
        let l = labels
            .iter()
            .map(|l| l.action.ok_or_else(|| Error::Evaluation("label lacks an action".into())))
            .collect::<Result<Vec<_>>>()?;
        Some((p, l))
    } else {
        None
    };
    let hits = |(p, l): &(Vec<usize>, Vec<usize>)| p.iter().zip(l).map(|(a, b)| a == b).collect::<Vec<_>>();

    if let Some(pair) = &tool_pairs {
        let h = hits(pair);
        report.tool_accuracy = Some(h.iter().filter(|&&x| x).count() as f64 / n);
    }
    if let Some(pair) = &action_pairs {
        let h = hits(pair);
        report.action_accuracy = Some(h.iter().filter(|&&x| x).count() as f64 / n);
    }
    if let (Some(t), Some(a)) = (&tool_pairs, &action_pairs) {
        let both = hits(t).into_iter().zip(hits(a)).filter(|(x, y)| *x && *y).count();
        report.joint_accuracy = Some(both as f64 / n);
    }

    if task == TaskSpec::Joint16 {
        let (tp, tl) = tool_pairs.as_ref().expect("joint task predicts tools");
        let (ap, al) = action_pairs.as_ref().expect("joint task predicts actions");
        let jp: Vec<usize> = tp.iter().zip(ap).map(|(t, a)| t * NUM_ACTIONS + a).collect();
        let jl: Vec<usize> = tl.iter().zip(al).map(|(t, a)| t * NUM_ACTIONS + a).collect();
        report
            .confusion
            .push(ConfusionReport::build("joint16", class_names(NUM_JOINT), &jp, &jl)?);
    } else {
        if let Some((p, l)) = &tool_pairs {
            report
                .confusion
                .push(ConfusionReport::build("tool", class_names(NUM_TOOLS), p, l)?);
        }
        if let Some((p, l)) = &action_pairs {
            let names = Action::ALL.iter().map(|a| a.name().to_string()).collect();
            report.confusion.push(ConfusionReport::build("action", names, p, l)?);
        }
    }
    Ok(report)
}

/// Runs `model` over every sample of `data` in order, `batch_size` at a time.
pub fn predict_all<T: Scalar>(
    model: &FusionModel<T>,
    data: &dyn BatchSource<T>,
    batch_size: usize,
) -> Result<(Vec<Prediction>, Vec<LabelRecord>)> {
    let mut preds = Vec::with_capacity(data.len());
    let mut labels = Vec::with_capacity(data.len());
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, l) = data.batch(chunk)?;
        preds.extend(predictions(&model.forward(&batch)?));
        labels.extend(l);
    }
    Ok((preds, labels))
}

/// Test metrics of `model` on `data` for `task`.
pub fn evaluate<T: Scalar>(model: &FusionModel<T>, data: &dyn BatchSource<T>, task: TaskSpec) -> Result<EvalReport> {
    model.config().check_task(task)?;
    if data.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let (preds, labels) = predict_all(model, data, 64)?;
    let mut report = evaluate_predictions(task, &preds, &labels)?;
    report.config_hash = Some(model.config().hash());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label(tool: usize, action: usize) -> LabelRecord {
        LabelRecord {
            tool,
            action: Some(action),
            joint: None,
        }
    }

    fn pred(tool: usize, action: usize) -> Prediction {
        Prediction {
            tool: Some(tool),
            action: Some(action),
            joint: None,
        }
    }

    #[test]
    fn joint_counts_intersection() {
        let labels = [label(0, 0), label(1, 1), label(2, 2), label(3, 3)];
        // tool right on samples 1..=3, action right on samples 2..=4
        let preds = [pred(0, 1), pred(1, 1), pred(2, 2), pred(0, 3)];
        let r = evaluate_predictions(TaskSpec::ToolsPlusActions, &preds, &labels).unwrap();
        assert_eq!(r.tool_accuracy, Some(0.75));
        assert_eq!(r.action_accuracy, Some(0.75));
        assert_eq!(r.joint_accuracy, Some(0.5));
        assert_eq!(r.headline(), 0.5);
    }

    #[test]
    fn perfect_predictions_give_identity() {
        let labels = [0, 1, 2, 3, 3, 1];
        let m = confusion_matrix(&labels, &labels, 4, true).unwrap();
        assert_eq!(m, Array2::<f64>::eye(4));
    }

    #[test]
    fn direct_count_example() {
        let m = confusion_matrix(&[0, 1, 1], &[0, 0, 1], 4, true).unwrap();
        assert_eq!(m.row(0).to_vec(), vec![0.5, 0.5, 0.0, 0.0]);
        assert_eq!(m.row(1).to_vec(), vec![0.0, 1.0, 0.0, 0.0]);
        assert_eq!(m.row(2).sum(), 0.0);
    }

    #[test]
    fn length_mismatch_is_an_input_error() {
        assert!(matches!(confusion_matrix(&[0], &[0, 1], 4, false), Err(Error::Input(_))));
    }

    #[test]
    fn empty_test_set_is_an_error() {
        assert!(matches!(
            evaluate_predictions(TaskSpec::ToolsNoAction, &[], &[]),
            Err(Error::Evaluation(_))
        ));
    }

    #[test]
    fn joint16_predictions_decode_to_heads() {
        let mut m = Array2::<f32>::zeros((1, 16));
        m[[0, 5]] = 3.0;
        let p = predictions(&Logits::Joint16(m));
        assert_eq!(p[0], Prediction { tool: Some(1), action: Some(1), joint: Some(5) });
    }
}
