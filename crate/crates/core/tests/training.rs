mod common;

use std::cell::RefCell;

use common::{random_examples, tiny_config};
use tool_affordance::dataset::labels::{CameraView, Phase, ViewKey};
use tool_affordance::dataset::{load_manifest, BatchSource, CachedExamples, ExampleSet, ImageCache, NormStats};
use tool_affordance::models::{build_fusion_model, load_checkpoint, FusionVariant};
use tool_affordance::synthgen::{generate_synthetic_dataset, MANIFEST_FILE};
use tool_affordance::training::{
    grid_search, run_seeds, train, train_with_validator, write_run_dir, SearchSpace, TrainConfig, ValMetrics,
};
use tool_affordance::{Error, TaskSpec};

const TASK: TaskSpec = TaskSpec::ToolsPlusActions;

fn small_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 1e-3,
        batch_size: 8,
        epochs,
        seed,
        ..Default::default()
    }
}

fn data(n: usize, seed: u64) -> ExampleSet<f32> {
    random_examples(&tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16), TASK, n, seed)
}

#[test]
fn tiny_model_overfits_sixteen_synthetic_samples() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(dir.path(), 1, 1, 7).unwrap();
    assert_eq!(manifest, dir.path().join(MANIFEST_FILE));
    let dataset = load_manifest(manifest).unwrap();
    assert_eq!(dataset.len(), 16);
    let views = [
        ViewKey::new(CameraView::Center, Phase::Initial),
        ViewKey::new(CameraView::Center, Phase::Final),
    ];
    let cache = ImageCache::load(&dataset, &views).unwrap();
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 8, 64);
    let examples = CachedExamples::new(&dataset, &cache, TASK, &config, cache.stats()).unwrap();
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let train_config = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 16,
        epochs: 200,
        seed: 0,
        ..Default::default()
    };
    // One step per epoch, so the epoch index counts steps.
    let outcome = train_with_validator(model, &examples, &train_config, TASK, |_, _| Ok(ValMetrics::scalar(0.0)), |_| {})
        .unwrap();
    let first = outcome.history.epochs.iter().position(|e| e.train_accuracy == 1.0);
    assert!(first.is_some(), "never reached 100% train accuracy");
}

#[test]
fn stub_validator_selects_the_peak_epoch() {
    let curve = [0.5, 0.9, 0.7];
    let snapshot = RefCell::new(None);
    let model = build_fusion_model::<f32>(&tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16), 0).unwrap();
    let outcome = train_with_validator(
        model,
        &data(16, 0),
        &small_config(3, 0),
        TASK,
        |m, epoch| {
            if epoch == 1 {
                *snapshot.borrow_mut() = Some(m.params().values().to_vec());
            }
            Ok(ValMetrics::scalar(curve[epoch]))
        },
        |_| {},
    )
    .unwrap();
    assert_eq!(outcome.history.best_epoch, Some(1));
    assert_eq!(outcome.history.epochs.len(), 3);
    assert_eq!(outcome.best.params().values(), &snapshot.into_inner().unwrap()[..]);
    assert_ne!(outcome.best.params().values(), outcome.last.params().values());
}

#[test]
fn ties_keep_the_earliest_epoch() {
    let curve = [0.5, 0.9, 0.9];
    let model = build_fusion_model::<f32>(&tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16), 0).unwrap();
    let outcome = train_with_validator(
        model,
        &data(8, 0),
        &small_config(3, 0),
        TASK,
        |_, e| Ok(ValMetrics::scalar(curve[e])),
        |_| {},
    )
    .unwrap();
    assert_eq!(outcome.history.best_epoch, Some(1));
}

#[test]
fn selection_prefers_joint_accuracy() {
    let m = ValMetrics {
        tool: Some(0.9),
        action: Some(0.8),
        joint: Some(0.7),
    };
    assert_eq!(m.selection(), 0.7);
    let tools_only = ValMetrics {
        tool: Some(0.6),
        ..Default::default()
    };
    assert_eq!(tools_only.selection(), 0.6);
}

#[test]
fn equal_seeds_give_identical_runs() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let (train_set, val_set) = (data(24, 1), data(8, 2));
    let run = |seed| {
        let model = build_fusion_model::<f32>(&config, seed).unwrap();
        train(model, &train_set, &val_set, &small_config(2, seed), TASK).unwrap()
    };
    let (a, b, c) = (run(5), run(5), run(6));
    let losses = |o: &tool_affordance::training::TrainOutcome<f32>| {
        o.history.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(losses(&a), losses(&b));
    assert_eq!(a.last.params().values(), b.last.params().values());
    assert_ne!(losses(&a), losses(&c));
}

#[test]
fn repeated_seed_runs_match() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let (tr, va, te) = (data(16, 1), data(8, 2), data(8, 3));
    let runs = run_seeds(&config, &small_config(2, 0), TASK, &tr, &va, &te, &[7, 7], 1).unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0].test, runs[1].test);
    assert_eq!(runs[0].history.to_csv(), runs[1].history.to_csv());
    assert_eq!(runs[0].seed, 7);
}

#[test]
fn parallel_seed_runs_match_sequential() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let (tr, va, te) = (data(16, 1), data(8, 2), data(8, 3));
    let seq = run_seeds(&config, &small_config(1, 0), TASK, &tr, &va, &te, &[0, 1], 1).unwrap();
    let par = run_seeds(&config, &small_config(1, 0), TASK, &tr, &va, &te, &[0, 1], 2).unwrap();
    for (s, p) in seq.iter().zip(&par) {
        assert_eq!(s.test, p.test);
        assert_eq!(s.seed, p.seed);
    }
}

#[test]
fn reduced_grid_has_four_trials_and_picks_the_best() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let (tr, va) = (data(16, 1), data(8, 2));
    let space = SearchSpace::reduced(3, 2);
    assert_eq!(SearchSpace::full().len(), 72);
    let result = grid_search(&space, &config, TASK, &tr, &va, 1, 0, 1).unwrap();
    assert_eq!(result.trials.len(), 4);
    let accs: Vec<f64> = result.trials.iter().map(|t| t.val_accuracy.unwrap()).collect();
    let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_max = accs.iter().position(|&a| a == max).unwrap();
    assert_eq!(result.best, Some(first_max));
    assert_eq!(result.to_csv().lines().count(), 5);
}

#[test]
fn failing_grid_trial_is_recorded() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let (tr, va) = (data(8, 1), data(8, 2));
    let space = SearchSpace {
        learning_rates: vec![1e-3],
        batch_sizes: vec![8],
        kernels: vec![3, 4],
        strides: vec![2],
    };
    let result = grid_search(&space, &config, TASK, &tr, &va, 1, 0, 1).unwrap();
    assert!(result.trials[0].error.is_none());
    assert!(result.trials[1].error.as_deref().unwrap().contains("kernel"));
    assert_eq!(result.best, Some(0));
    assert!(result.to_csv().contains("failed"));
}

#[test]
fn huge_learning_rate_diverges() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        ..small_config(3, 0)
    };
    let err = train(model, &data(16, 1), &data(8, 2), &cfg, TASK).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err}");
}

#[test]
fn invalid_settings_are_config_errors() {
    let config = tiny_config(FusionVariant::SharedCentral1C1N, TASK, 4, 16);
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..small_config(1, 0)
        },
        TrainConfig {
            learning_rate: -1.0,
            ..small_config(1, 0)
        },
    ] {
        let model = build_fusion_model::<f32>(&config, 0).unwrap();
        assert!(matches!(train(model, &data(8, 1), &data(8, 2), &cfg, TASK), Err(Error::Config(_))));
    }
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let err = train(model, &data(8, 1), &data(8, 2), &small_config(1, 0), TaskSpec::Joint16).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn run_directory_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_config(FusionVariant::Shared3C3N, TaskSpec::Joint16, 4, 16);
    let tr = random_examples::<f32>(&config, TaskSpec::Joint16, 16, 1);
    let va = random_examples::<f32>(&config, TaskSpec::Joint16, 8, 2);
    let model = build_fusion_model::<f32>(&config, 0).unwrap();
    let cfg = small_config(2, 0);
    let outcome = train(model, &tr, &va, &cfg, TaskSpec::Joint16).unwrap();
    let stats = NormStats {
        mean: [0.5; 3],
        std: [0.25; 3],
    };
    let paths = write_run_dir(dir.path(), &outcome, &cfg, TaskSpec::Joint16, &stats).unwrap();
    let history = std::fs::read_to_string(&paths.history).unwrap();
    assert_eq!(history.lines().count(), 3);

    let (loaded, header) = load_checkpoint::<f32>(&paths.best, Some(&config)).unwrap();
    assert_eq!(header.norm_stats, Some(stats));
    let (batch, _) = va.batch(&[0, 1, 2]).unwrap();
    assert_eq!(loaded.forward(&batch).unwrap(), outcome.best.forward(&batch).unwrap());

    let other = tiny_config(FusionVariant::Shared3C3N, TaskSpec::Joint16, 8, 16);
    assert!(matches!(load_checkpoint::<f32>(&paths.best, Some(&other)), Err(Error::Checkpoint(_))));
}
