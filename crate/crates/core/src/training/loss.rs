//! Cross-entropy over one or two classifier heads.

use ndarray::Array2;

use crate::dataset::LabelRecord;
use crate::error::{Error, Result};
use crate::models::Logits;
use crate::scalar::Scalar;
use crate::task::HeadLayout;

/// Mean softmax cross-entropy of `logits` (batch × classes) against class
/// indices, and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    let (n, classes) = logits.dim();
    if labels.len() != n {
        return Err(Error::Input(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label: bad, classes });
    }
    let scale = T::one() / T::from_usize_lossy(n.max(1));
    let mut grad = Array2::zeros((n, classes));
    let mut total = T::zero();
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        total = total + (log_z - row[label]);
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let target = if j == label { T::one() } else { T::zero() };
            grad[[i, j]] = (p - target) * scale;
        }
    }
    Ok((total * scale, grad))
}

fn head_labels(layout: HeadLayout, labels: &[LabelRecord]) -> Result<Vec<Vec<usize>>> {
    let tool = || labels.iter().map(|l| l.tool).collect::<Vec<_>>();
    let action = || {
        labels
            .iter()
            .map(|l| l.action.ok_or_else(|| Error::Input("label record lacks an action".into())))
            .collect::<Result<Vec<_>>>()
    };
    Ok(match layout {
        HeadLayout::Dual => vec![tool(), action()?],
        HeadLayout::ToolOnly => vec![tool()],
        HeadLayout::ActionOnly => vec![action()?],
        HeadLayout::Joint16 => vec![labels
            .iter()
            .map(|l| l.joint.ok_or_else(|| Error::Input("label record lacks a joint index".into())))
            .collect::<Result<Vec<_>>>()?],
    })
}

/// Loss for a head layout: the sum of per-head mean cross-entropies.
pub fn loss<T: Scalar>(logits: &Logits<T>, labels: &[LabelRecord]) -> Result<T> {
    Ok(loss_and_grad(logits, labels)?.0)
}

pub fn loss_and_grad<T: Scalar>(logits: &Logits<T>, labels: &[LabelRecord]) -> Result<(T, Logits<T>)> {
    let targets = head_labels(logits.layout(), labels)?;
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(targets.len());
    for (head, target) in logits.heads().into_iter().zip(&targets) {
        let (l, g) = cross_entropy(head, target)?;
        total = total + l;
        grads.push(g);
    }
    Ok((total, Logits::from_heads(logits.layout(), grads)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn rec(tool: usize, action: usize) -> LabelRecord {
        LabelRecord {
            tool,
            action: Some(action),
            joint: Some(tool * 4 + action),
        }
    }

    #[test]
    fn uniform_logits_give_log_class_count() {
        let labels = [rec(0, 3), rec(2, 1)];
        let dual = Logits::Dual {
            tool: Array2::<f64>::zeros((2, 4)),
            action: Array2::<f64>::zeros((2, 4)),
        };
        assert!((loss(&dual, &labels).unwrap() - 2.0 * 4f64.ln()).abs() < 1e-12);
        assert!((loss(&dual, &labels).unwrap() - 2.772588722239781).abs() < 1e-12);
        let joint = Logits::Joint16(Array2::<f64>::zeros((2, 16)));
        assert!((loss(&joint, &labels).unwrap() - 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_decreases_with_margin() {
        let labels = [rec(1, 0)];
        let at = |margin: f64| {
            let mut m = Array2::<f64>::zeros((1, 4));
            m[[0, 1]] = margin;
            loss(&Logits::Tool(m), &labels).unwrap()
        };
        let (a, b, c) = (at(1.0), at(5.0), at(10.0));
        assert!(a > b && b > c && c > 0.0);
        assert!(c < 1e-3);
    }

    #[test]
    fn dual_loss_is_sum_of_heads() {
        let tool: Array2<f64> = array![[0.3, -1.0, 2.0, 0.1], [1.5, 0.2, -0.7, 0.0]];
        let action = array![[-0.2, 0.4, 0.9, -1.1], [0.0, 0.0, 3.0, 1.0]];
        let labels = [rec(2, 1), rec(0, 3)];
        let dual = loss(
            &Logits::Dual {
                tool: tool.clone(),
                action: action.clone(),
            },
            &labels,
        )
        .unwrap();
        let t = loss(&Logits::Tool(tool), &labels).unwrap();
        let a = loss(&Logits::Action(action), &labels).unwrap();
        assert!((dual - (t + a)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let logits: Array2<f64> = array![[0.3, -1.0, 2.0, 0.1], [1.5, 0.2, -0.7, 0.0]];
        let labels = [3usize, 0];
        let (_, g) = cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for j in 0..4 {
                let mut p = logits.clone();
                p[[i, j]] += h;
                let mut m = logits.clone();
                m[[i, j]] -= h;
                let fd = (cross_entropy(&p, &labels).unwrap().0 - cross_entropy(&m, &labels).unwrap().0) / (2.0 * h);
                assert!((fd - g[[i, j]]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let err = cross_entropy(&Array2::<f32>::zeros((1, 4)), &[4]).unwrap_err();
        assert!(matches!(err, Error::Label { label: 4, classes: 4 }));
    }
}
