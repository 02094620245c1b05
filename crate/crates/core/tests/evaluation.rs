use proptest::prelude::*;
use tool_affordance::dataset::LabelRecord;
use tool_affordance::evaluation::{aggregate_seeds, evaluate_predictions, ConfusionReport, Prediction};
use tool_affordance::TaskSpec;

fn check_head(report: &ConfusionReport, accuracy: f64, truth: &[usize], guess: &[usize]) {
    let n = truth.len() as f64;
    let mut weighted = 0.0;
    for (i, (row, counts)) in report.normalized.iter().zip(&report.counts).enumerate() {
        let support: usize = counts.iter().sum();
        assert_eq!(support, truth.iter().filter(|&&t| t == i).count());
        let sum: f64 = row.iter().sum();
        if support > 0 {
            assert!((sum - 1.0).abs() < 1e-9, "{} row {i} sums to {sum}", report.head);
        } else {
            assert_eq!(sum, 0.0);
        }
        weighted += support as f64 * row[i];
    }
    let direct = truth.iter().zip(guess).filter(|(t, g)| t == g).count() as f64 / n;
    assert!((accuracy - direct).abs() < 1e-12);
    assert!((weighted / n - accuracy).abs() < 1e-9, "{} vs {accuracy}", weighted / n);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dual_head_confusion_properties(
        rows in proptest::collection::vec((0usize..4, 0usize..4, 0usize..4, 0usize..4), 1..200)
    ) {
        let labels: Vec<LabelRecord> = rows
            .iter()
            .map(|&(t, a, _, _)| LabelRecord { tool: t, action: Some(a), joint: None })
            .collect();
        let preds: Vec<Prediction> = rows
            .iter()
            .map(|&(_, _, t, a)| Prediction { tool: Some(t), action: Some(a), joint: None })
            .collect();
        let r = evaluate_predictions(TaskSpec::ToolsPlusActions, &preds, &labels).unwrap();
        let (tool, action, joint) = (r.tool_accuracy.unwrap(), r.action_accuracy.unwrap(), r.joint_accuracy.unwrap());
        prop_assert!(joint <= tool.min(action) + 1e-12);
        let truth_t: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let guess_t: Vec<usize> = rows.iter().map(|r| r.2).collect();
        let truth_a: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let guess_a: Vec<usize> = rows.iter().map(|r| r.3).collect();
        let tool_cm = r.confusion.iter().find(|c| c.head == "tool").unwrap();
        let action_cm = r.confusion.iter().find(|c| c.head == "action").unwrap();
        check_head(tool_cm, tool, &truth_t, &guess_t);
        check_head(action_cm, action, &truth_a, &guess_a);
        let both = rows.iter().filter(|r| r.0 == r.2 && r.1 == r.3).count() as f64 / rows.len() as f64;
        prop_assert!((joint - both).abs() < 1e-12);
    }

    #[test]
    fn joint16_confusion_properties(
        rows in proptest::collection::vec((0usize..16, 0usize..16), 1..200)
    ) {
        let labels: Vec<LabelRecord> = rows
            .iter()
            .map(|&(j, _)| LabelRecord { tool: j / 4, action: Some(j % 4), joint: Some(j) })
            .collect();
        let preds: Vec<Prediction> = rows
            .iter()
            .map(|&(_, j)| Prediction { tool: Some(j / 4), action: Some(j % 4), joint: Some(j) })
            .collect();
        let r = evaluate_predictions(TaskSpec::Joint16, &preds, &labels).unwrap();
        let joint = r.joint_accuracy.unwrap();
        prop_assert!(joint <= r.tool_accuracy.unwrap().min(r.action_accuracy.unwrap()) + 1e-12);
        let cm = r.confusion.iter().find(|c| c.head == "joint16").unwrap();
        let truth: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let guess: Vec<usize> = rows.iter().map(|r| r.1).collect();
        check_head(cm, joint, &truth, &guess);
    }
}

#[test]
fn five_seed_interval() {
    let values = [0.86, 0.84, 0.88, 0.85, 0.87];
    // Sample standard deviation sqrt(0.001 / 4) and t(0.975, 4) = 2.776445.
    let half = 2.776_445_105 * (0.001f64 / 4.0).sqrt() / 5f64.sqrt();
    let r = aggregate_seeds(&values).unwrap();
    assert!((r.mean - 0.86).abs() < 1e-12);
    assert!((r.half_width - half).abs() < 1e-6);
    assert!((r.half_width - 0.0196).abs() < 1e-4);
    assert_eq!(r.render(), "86.00 ± 1.96");
}
