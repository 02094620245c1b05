use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::trainer::{TrainConfig, TrainOutcome};
use crate::dataset::NormStats;
use crate::error::{Error, Result};
use crate::models::{save_checkpoint, FusionConfig};
use crate::scalar::Scalar;
use crate::task::TaskSpec;

pub const RUN_CONFIG: &str = "config.json";
pub const HISTORY_CSV: &str = "history.csv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Snapshot of everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub fusion: FusionConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    pub best_epoch: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunPaths {
    pub config: PathBuf,
    pub history: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
}

/// Writes the config snapshot, per-epoch history and both checkpoints.
pub fn write_run_dir<T: Scalar>(
    dir: &Path,
    outcome: &TrainOutcome<T>,
    config: &TrainConfig,
    task: TaskSpec,
    stats: &NormStats,
) -> Result<RunPaths> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths = RunPaths {
        config: dir.join(RUN_CONFIG),
        history: dir.join(HISTORY_CSV),
        best: dir.join(BEST_CHECKPOINT),
        last: dir.join(FINAL_CHECKPOINT),
    };
    let fusion = outcome.best.config().clone();
    let snapshot = RunConfig {
        task,
        config_hash: fusion.hash(),
        fusion,
        train: config.clone(),
        best_epoch: outcome.history.best_epoch,
    };
    let json = serde_json::to_string_pretty(&snapshot).expect("run config serializes");
    fs::write(&paths.config, json).map_err(|e| Error::io(&paths.config, e))?;
    fs::write(&paths.history, outcome.history.to_csv()).map_err(|e| Error::io(&paths.history, e))?;
    save_checkpoint(&paths.best, &outcome.best, Some(task), Some(stats))?;
    save_checkpoint(&paths.last, &outcome.last, Some(task), Some(stats))?;
    Ok(paths)
}
