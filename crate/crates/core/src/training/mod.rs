//! Loss, optimizer, training loop, grid search and multi-seed runs.

pub mod grid;
pub mod loss;
pub mod optim;
pub mod rundir;
pub mod trainer;

pub use grid::{grid_search, run_seeds, GridPoint, GridResult, SearchSpace, SeedRun, Trial};
pub use loss::{cross_entropy, loss, loss_and_grad};
pub use optim::{Adam, AdamSettings};
pub use rundir::{write_run_dir, RunConfig, RunPaths};
pub use trainer::{
    train, train_step, train_with_validator, validation_metrics, EpochRecord, TrainConfig, TrainHistory, TrainOutcome,
    ValMetrics,
};
