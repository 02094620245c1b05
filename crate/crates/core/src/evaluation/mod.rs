//! Test metrics, seed aggregation and result reporting.

pub mod metrics;
pub mod report;
pub mod stats;

pub use metrics::{confusion_matrix, evaluate, evaluate_predictions, predict_all, predictions, ConfusionReport, EvalReport, Prediction};
pub use report::{emit_report, ReportFiles, ResultsTable};
pub use stats::{aggregate_seeds, AggregateResult};
