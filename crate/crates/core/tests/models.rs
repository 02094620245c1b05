mod common;

use common::{random_examples, reference_parameter_count, tiny_config, SIDE};
use ndarray::ArrayD;
use tool_affordance::dataset::labels::{CameraView, Phase, ViewKey};
use tool_affordance::dataset::{BatchSource, ExampleSet};
use tool_affordance::evaluation::evaluate;
use tool_affordance::models::{
    build_backbone, build_fusion_model, BackboneFamily, BackboneSpec, FusionConfig, FusionModel, FusionVariant, Logits,
};
use tool_affordance::training::{loss_and_grad, train_step, Adam, AdamSettings};
use tool_affordance::{Error, TaskSpec};

fn heads_shape(logits: &Logits<f32>) -> Vec<(usize, usize)> {
    logits.heads().iter().map(|h| h.dim()).collect()
}

#[test]
fn every_variant_and_head_runs_forward_and_backward() {
    for variant in FusionVariant::ALL {
        for (task, expected) in [
            (TaskSpec::ToolsPlusActions, vec![(3, 4), (3, 4)]),
            (TaskSpec::Joint16, vec![(3, 16)]),
            (TaskSpec::ToolsWithAction, vec![(3, 4)]),
            (TaskSpec::ActionsOnly, vec![(3, 4)]),
        ] {
            let config = tiny_config(variant, task, 4, 16);
            let mut model = build_fusion_model::<f32>(&config, 0).unwrap();
            let data = random_examples::<f32>(&config, task, 3, 1);
            let (batch, labels) = data.batch(&[0, 1, 2]).unwrap();

            let logits = model.forward(&batch).unwrap();
            assert_eq!(heads_shape(&logits), expected, "{variant} {task}");
            let emb = model.embeddings(&batch).unwrap();
            assert_eq!(emb.len(), variant.slots().len());
            assert!(emb.iter().all(|e| e.dim() == (3, 16)));
            assert_eq!(
                config.head_input_width(),
                16 * variant.slots().len() + if task == TaskSpec::ToolsWithAction { 4 } else { 0 }
            );

            let (logits, cache) = model.forward_train(&batch).unwrap();
            assert_eq!(cache.encoder_invocations(), variant.slots().len());
            let (loss, dlogits) = loss_and_grad(&logits, &labels).unwrap();
            assert!(loss.is_finite());
            let grads = model.backward(cache, &dlogits);
            for (g, p) in grads.values().iter().zip(model.params().values()) {
                assert_eq!(g.shape(), p.shape());
            }
        }
    }
}

#[test]
fn stacked_variant_takes_eighteen_channels() {
    let config = tiny_config(FusionVariant::Stacked3C1N, TaskSpec::ToolsPlusActions, 4, 16);
    assert_eq!(config.backbone.input_channels, 18);
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    assert_eq!(model.encoders().len(), 1);
    assert_eq!(model.slots().len(), 1);
    assert_eq!(model.slots()[0].views.len(), 6);
    let first = model.params().iter().next().unwrap();
    assert_eq!(first.1.shape(), &[4, 18, 3, 3], "{}", first.0);
}

#[test]
fn encoder_counts_per_variant() {
    let expected = [
        (FusionVariant::Stacked3C1N, 1, 1),
        (FusionVariant::Separate3C6N, 6, 6),
        (FusionVariant::Shared3C3N, 3, 6),
        (FusionVariant::SeparateCentral1C2N, 2, 2),
        (FusionVariant::SharedCentral1C1N, 1, 2),
    ];
    for (variant, encoders, slots) in expected {
        let config = tiny_config(variant, TaskSpec::ToolsNoAction, 4, 16);
        let model = build_fusion_model::<f32>(&config, 0).unwrap();
        assert_eq!(model.encoders().len(), encoders, "{variant}");
        assert_eq!(model.slots().len(), slots, "{variant}");
    }
}

#[test]
fn wrong_inputs_are_shape_errors() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TaskSpec::ToolsNoAction, 4, 16);
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let other = tiny_config(FusionVariant::Shared3C3N, TaskSpec::ToolsNoAction, 4, 16);
    let (batch, _) = random_examples::<f32>(&other, TaskSpec::ToolsNoAction, 2, 0).batch(&[0, 1]).unwrap();
    assert!(matches!(model.forward(&batch), Err(Error::Shape { .. })));

    let with_action = tiny_config(FusionVariant::SharedCentral1C1N, TaskSpec::ToolsWithAction, 4, 16);
    let (batch, _) = random_examples::<f32>(&with_action, TaskSpec::ToolsWithAction, 2, 0)
        .batch(&[0, 1])
        .unwrap();
    assert!(matches!(model.forward(&batch), Err(Error::Shape { ref key, .. }) if key == "action"));
}

#[test]
fn invalid_first_block_is_a_config_error() {
    for (k, s) in [(4, 2), (3, 3)] {
        let spec = BackboneSpec::new(BackboneFamily::Tiny).with_first_block(k, s);
        let config = FusionConfig::for_task(FusionVariant::SharedCentral1C1N, spec, TaskSpec::ToolsNoAction);
        assert!(matches!(build_fusion_model::<f32>(&config, 0), Err(Error::Config(_))));
    }
}

#[test]
fn residual_parameter_counts() {
    for (family, quoted) in [
        (BackboneFamily::Resnet18, 11.7e6),
        (BackboneFamily::Resnet50, 25.6e6),
        (BackboneFamily::Resnet101, 44.5e6),
    ] {
        let encoder = build_backbone::<f32>(&BackboneSpec::new(family), 0)
            .unwrap()
            .with_reference_head(1000);
        let n = encoder.count_parameters();
        assert_eq!(n, reference_parameter_count(family), "{family}");
        let rel = (n as f64 - quoted).abs() / quoted;
        assert!(rel < 0.01, "{family}: {n} vs {quoted} ({rel:.4})");
        assert!(encoder.backbone().has_skip_connections());
    }
}

#[test]
fn resnet18_forward_produces_512_wide_embeddings() {
    let encoder = build_backbone::<f32>(&BackboneSpec::new(BackboneFamily::Resnet18), 0).unwrap();
    let x = ArrayD::<f32>::zeros(ndarray::IxDyn(&[1, 3, SIDE, SIDE]));
    assert_eq!(encoder.forward(x).unwrap().dim(), (1, 512));
}

fn adam(model: &FusionModel<f32>) -> Adam<f32> {
    Adam::new(model.params(), 1e-3, AdamSettings::default())
}

#[test]
fn shared_encoders_stay_identical_after_training() {
    for variant in [FusionVariant::Shared3C3N, FusionVariant::SharedCentral1C1N] {
        let task = TaskSpec::ToolsPlusActions;
        let config = tiny_config(variant, task, 4, 16);
        let mut model = build_fusion_model::<f32>(&config, 3).unwrap();
        let initial_params = model.params().values().to_vec();
        let data = random_examples::<f32>(&config, task, 8, 5);
        let mut opt = adam(&model);
        for step in 0..10 {
            let idx: Vec<usize> = (0..4).map(|i| (step * 4 + i) % 8).collect();
            train_step(&mut model, &mut opt, &data, &idx).unwrap();
        }
        assert_ne!(model.params().values(), &initial_params[..]);

        for camera in variant.cameras() {
            let before = model.encoder_for(ViewKey::new(*camera, Phase::Initial)).unwrap();
            let after = model.encoder_for(ViewKey::new(*camera, Phase::Final)).unwrap();
            assert_eq!(before.name(), after.name());
            assert_eq!(before.param_ids(), after.param_ids());
        }

        // The same image as both phases must embed bit-identically.
        let (mut batch, _) = data.batch(&[0, 1]).unwrap();
        for camera in variant.cameras() {
            let img = batch.views[&ViewKey::new(*camera, Phase::Initial)].clone();
            batch.views.insert(ViewKey::new(*camera, Phase::Final), img);
        }
        let emb = model.embeddings(&batch).unwrap();
        for pair in emb.chunks(2) {
            assert_eq!(pair[0], pair[1], "{variant}");
        }
    }
}

#[test]
fn separate_encoders_diverge() {
    let task = TaskSpec::ToolsNoAction;
    let config = tiny_config(FusionVariant::SeparateCentral1C2N, task, 4, 16);
    let model = build_fusion_model::<f32>(&config, 3).unwrap();
    let data = random_examples::<f32>(&config, task, 2, 5);
    let (mut batch, _) = data.batch(&[0, 1]).unwrap();
    let img = batch.views[&ViewKey::new(CameraView::Center, Phase::Initial)].clone();
    batch.views.insert(ViewKey::new(CameraView::Center, Phase::Final), img);
    let emb = model.embeddings(&batch).unwrap();
    assert_ne!(emb[0], emb[1]);
}

#[test]
fn every_parameter_receives_gradient() {
    for variant in FusionVariant::ALL {
        for task in [TaskSpec::ToolsPlusActions, TaskSpec::Joint16, TaskSpec::ToolsWithAction] {
            let config = tiny_config(variant, task, 4, 16);
            let mut model = build_fusion_model::<f32>(&config, 0).unwrap();
            let data = random_examples::<f32>(&config, task, 4, 2);
            let (batch, labels) = data.batch(&[0, 1, 2, 3]).unwrap();
            let (logits, cache) = model.forward_train(&batch).unwrap();
            let (_, dlogits) = loss_and_grad(&logits, &labels).unwrap();
            let grads = model.backward(cache, &dlogits);
            for (id, name) in model.params().ids().zip(model.params().names()) {
                assert!(grads.norm(id) > 0.0, "{variant} {task}: {name} has zero gradient");
            }
        }
    }
}

/// Central differences over every parameter of a small f64 model.
#[test]
fn analytic_gradients_match_finite_differences() {
    let task = TaskSpec::ToolsPlusActions;
    let config = tiny_config(FusionVariant::SharedCentral1C1N, task, 2, 4);
    let mut model = build_fusion_model::<f64>(&config, 11).unwrap();
    assert!(model.count_parameters() <= 5000, "{}", model.count_parameters());
    let data = random_examples::<f64>(&config, task, 4, 12);
    let (batch, labels) = data.batch(&[0, 1, 2, 3]).unwrap();

    let (logits, cache) = model.forward_train(&batch).unwrap();
    let (_, dlogits) = loss_and_grad(&logits, &labels).unwrap();
    let grads = model.backward(cache, &dlogits);

    // Small enough that perturbations rarely cross a ReLU kink.
    let h = 1e-6;
    let ids: Vec<_> = model.params().ids().collect();
    for (t, id) in ids.into_iter().enumerate() {
        let name = model.params().names()[t].clone();
        let n = model.params().param(id).len();
        let mut numeric = Vec::with_capacity(n);
        for i in 0..n {
            let mut eval = |delta: f64| {
                let orig = model.params().param(id).as_slice().unwrap()[i];
                model.params_mut().param_mut(id).as_slice_mut().unwrap()[i] = orig + delta;
                let (logits, _) = model.forward_train(&batch).unwrap();
                model.params_mut().param_mut(id).as_slice_mut().unwrap()[i] = orig;
                loss_and_grad(&logits, &labels).unwrap().0
            };
            numeric.push((eval(h) - eval(-h)) / (2.0 * h));
        }
        let analytic = grads.get(id).as_slice().unwrap();
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(1e-12);
        assert!(rel < 1e-3, "{name}: relative error {rel:e}");
    }
}

#[test]
fn untrained_model_is_at_chance() {
    let task = TaskSpec::ToolsNoAction;
    let config = tiny_config(FusionVariant::SharedCentral1C1N, task, 4, 16);
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let data: ExampleSet<f32> = random_examples(&config, task, 64, 9);
    let acc = evaluate(&model, &data, task).unwrap().headline();
    assert!((0.15..=0.35).contains(&acc), "{acc}");
}

#[test]
fn f32_and_f64_models_agree() {
    let task = TaskSpec::Joint16;
    let config = tiny_config(FusionVariant::Shared3C3N, task, 4, 16);
    let m32 = build_fusion_model::<f32>(&config, 4).unwrap();
    let m64 = build_fusion_model::<f64>(&config, 4).unwrap();
    let (b32, _) = random_examples::<f32>(&config, task, 2, 8).batch(&[0, 1]).unwrap();
    let (b64, _) = random_examples::<f64>(&config, task, 2, 8).batch(&[0, 1]).unwrap();
    let l32 = m32.forward(&b32).unwrap();
    let l64 = m64.forward(&b64).unwrap();
    for (a, b) in l32.heads()[0].iter().zip(l64.heads()[0].iter()) {
        assert!((*a as f64 - b).abs() < 1e-3 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn same_seed_same_initialization() {
    let config = tiny_config(FusionVariant::Separate3C6N, TaskSpec::Joint16, 4, 16);
    let a = build_fusion_model::<f32>(&config, 21).unwrap();
    let b = build_fusion_model::<f32>(&config, 21).unwrap();
    let c = build_fusion_model::<f32>(&config, 22).unwrap();
    assert_eq!(a.params().values(), b.params().values());
    assert_ne!(a.params().values(), c.params().values());
    assert_eq!(a.config().hash(), c.config().hash());
}
