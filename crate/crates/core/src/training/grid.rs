//! Hyperparameter grid search and multi-seed runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainConfig, TrainHistory, BATCH_SIZES, LEARNING_RATES};
use crate::dataset::BatchSource;
use crate::error::{Error, Result};
use crate::evaluation::metrics::{evaluate, EvalReport};
use crate::models::{build_fusion_model, FusionConfig};
use crate::scalar::Scalar;
use crate::task::TaskSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl SearchSpace {
    /// 3 learning rates × 4 batch sizes × 3 first-block kernels × 2 strides.
    pub fn full() -> Self {
        SearchSpace {
            learning_rates: LEARNING_RATES.to_vec(),
            batch_sizes: BATCH_SIZES.to_vec(),
            kernels: vec![3, 5, 7],
            strides: vec![1, 2],
        }
    }

    /// Two learning rates × two batch sizes, first block fixed as given.
    pub fn reduced(kernel: usize, stride: usize) -> Self {
        SearchSpace {
            learning_rates: vec![1e-3, 5e-4],
            batch_sizes: vec![16, 32],
            kernels: vec![kernel],
            strides: vec![stride],
        }
    }

    pub fn len(&self) -> usize {
        self.learning_rates.len() * self.batch_sizes.len() * self.kernels.len() * self.strides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination, learning rate varying slowest.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rates {
            for &batch_size in &self.batch_sizes {
                for &kernel in &self.kernels {
                    for &stride in &self.strides {
                        out.push(GridPoint {
                            learning_rate,
                            batch_size,
                            kernel,
                            stride,
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub point: GridPoint,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub config_hash: String,
    /// Set when the trial failed, e.g. diverged.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub trials: Vec<Trial>,
    /// Index of the trial with the highest validation accuracy.
    pub best: Option<usize>,
}

impl GridResult {
    pub fn best_trial(&self) -> Option<&Trial> {
        self.best.map(|i| &self.trials[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("trial,learning_rate,batch_size,kernel,stride,val_accuracy,best_epoch,status,config_hash\n");
        for t in &self.trials {
            let status = match &t.error {
                Some(e) => format!("\"failed: {}\"", e.replace('"', "'")),
                None => "ok".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                t.index,
                t.point.learning_rate,
                t.point.batch_size,
                t.point.kernel,
                t.point.stride,
                t.val_accuracy.map(|v| format!("{v:.6}")).unwrap_or_default(),
                t.best_epoch.map(|v| v.to_string()).unwrap_or_default(),
                status,
                t.config_hash
            ));
        }
        out
    }
}

/// Runs `f` over `items` on at most `jobs` worker threads, keeping order.
pub(crate) fn fan_out<I, O, F>(items: Vec<I>, jobs: usize, f: F) -> Result<Vec<O>>
where
    I: Send,
    O: Send,
    F: Fn(I) -> O + Sync + Send,
{
    if jobs <= 1 {
        return Ok(items.into_iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.into_par_iter().map(f).collect()))
}

/// Trains one model per grid point and ranks them by validation accuracy on
/// `task`. A failing trial is recorded, not fatal.
#[allow(clippy::too_many_arguments)]
pub fn grid_search<T: Scalar>(
    space: &SearchSpace,
    base: &FusionConfig,
    task: TaskSpec,
    train_set: &dyn BatchSource<T>,
    val_set: &dyn BatchSource<T>,
    epochs: usize,
    seed: u64,
    jobs: usize,
) -> Result<GridResult> {
    if space.is_empty() {
        return Err(Error::Config("empty search space".into()));
    }
    base.check_task(task)?;
    let points: Vec<(usize, GridPoint)> = space.points().into_iter().enumerate().collect();
    let trials = fan_out(points, jobs, |(index, point)| {
        let mut fusion = base.clone();
        fusion.backbone = fusion.backbone.clone().with_first_block(point.kernel, point.stride);
        let config = TrainConfig {
            learning_rate: point.learning_rate,
            batch_size: point.batch_size,
            epochs,
            seed,
            ..Default::default()
        };
        let config_hash = fusion.hash();
        let run = || -> Result<TrainHistory> {
            fusion.validate()?;
            let model = build_fusion_model::<T>(&fusion, seed)?;
            Ok(train(model, train_set, val_set, &config, task)?.history)
        };
        match run() {
            Ok(h) => Trial {
                index,
                point,
                val_accuracy: h.best().map(|e| e.val.selection()),
                best_epoch: h.best_epoch,
                config_hash,
                error: None,
            },
            Err(e) => Trial {
                index,
                point,
                val_accuracy: None,
                best_epoch: None,
                config_hash,
                error: Some(e.to_string()),
            },
        }
    })?;
    let mut best: Option<usize> = None;
    for (i, t) in trials.iter().enumerate() {
        if let Some(v) = t.val_accuracy {
            if best.is_none_or(|b| v > trials[b].val_accuracy.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(i);
            }
        }
    }
    Ok(GridResult { trials, best })
}

#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub history: TrainHistory,
    pub test: EvalReport,
}

impl SeedRun {
    pub fn accuracy(&self) -> f64 {
        self.test.headline()
    }
}

/// One full train and test cycle per seed, results in seed order. The seed
/// drives both initialization and data order.
#[allow(clippy::too_many_arguments)]
pub fn run_seeds<T: Scalar>(
    fusion: &FusionConfig,
    config: &TrainConfig,
    task: TaskSpec,
    train_set: &dyn BatchSource<T>,
    val_set: &dyn BatchSource<T>,
    test_set: &dyn BatchSource<T>,
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<SeedRun>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    fusion.check_task(task)?;
    let runs = fan_out(seeds.to_vec(), jobs, |seed| {
        let wrap = |e| Error::Seed {
            seed,
            source: Box::new(e),
        };
        let config = TrainConfig { seed, ..config.clone() };
        let model = build_fusion_model::<T>(fusion, seed).map_err(wrap)?;
        let outcome = train(model, train_set, val_set, &config, task).map_err(wrap)?;
        let test = evaluate(&outcome.best, test_set, task).map_err(wrap)?;
        Ok(SeedRun {
            seed,
            history: outcome.history,
            test,
        })
    })?;
    runs.into_iter().collect()
}
