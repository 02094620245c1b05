#![allow(dead_code)]

use std::collections::BTreeMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tool_affordance::dataset::labels::NUM_ACTIONS;
use tool_affordance::dataset::{ExampleSet, LabelRecord, ModelInput};
use tool_affordance::models::{BackboneFamily, BackboneSpec, FusionConfig, FusionVariant};
use tool_affordance::{Scalar, TaskSpec};

pub const SIDE: usize = 128;

pub fn tiny_config(variant: FusionVariant, task: TaskSpec, width: usize, embedding: usize) -> FusionConfig {
    let spec = BackboneSpec::new(BackboneFamily::Tiny).with_tiny_size(width, embedding);
    FusionConfig::for_task(variant, spec, task)
}

/// Random standard-normal images with balanced labels; joint class `i % 16`.
pub fn random_examples<T: Scalar>(config: &FusionConfig, task: TaskSpec, n: usize, seed: u64) -> ExampleSet<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let views = config
                .variant
                .views()
                .into_iter()
                .map(|v| {
                    let img = Array3::from_shape_fn((3, SIDE, SIDE), |_| {
                        T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal))
                    });
                    (v, img)
                })
                .collect::<BTreeMap<_, _>>();
            let (tool, action) = ((i % 16) / 4, i % 4);
            let action_input = task.uses_action_input().then(|| {
                let mut a = [T::zero(); NUM_ACTIONS];
                a[action] = T::one();
                a
            });
            let label = LabelRecord {
                tool,
                action: task.predicts_actions().then_some(action),
                joint: (task == TaskSpec::Joint16).then_some(tool * 4 + action),
            };
            (
                ModelInput {
                    views,
                    action: action_input,
                },
                label,
            )
        })
        .collect();
    ExampleSet::new(examples)
}

/// Independent count for the residual networks with a 1000-way classifier.
pub fn reference_parameter_count(family: BackboneFamily) -> usize {
    let bn = |c: usize| 2 * c;
    let (bottleneck, depths) = match family {
        BackboneFamily::Resnet18 => (false, [2, 2, 2, 2]),
        BackboneFamily::Resnet50 => (true, [3, 4, 6, 3]),
        BackboneFamily::Resnet101 => (true, [3, 4, 23, 3]),
        BackboneFamily::Tiny => unreachable!(),
    };
    let mut total = 3 * 64 * 49 + bn(64);
    let mut cin = 64;
    for (stage, (&depth, planes)) in depths.iter().zip([64usize, 128, 256, 512]).enumerate() {
        for b in 0..depth {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let out = if bottleneck { planes * 4 } else { planes };
            total += if bottleneck {
                cin * planes + bn(planes) + planes * planes * 9 + bn(planes) + planes * out + bn(out)
            } else {
                cin * planes * 9 + bn(planes) + planes * planes * 9 + bn(planes)
            };
            if stride != 1 || cin != out {
                total += cin * out + bn(out);
            }
            cin = out;
        }
    }
    total + cin * 1000 + 1000
}
