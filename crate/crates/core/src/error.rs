use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot load {path}: {msg}")]
    Load { path: PathBuf, msg: String },
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("split error: {0}")]
    Split(String),
    #[error("image decode error at {path}: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("expected a 3-channel RGB image, got {channels} channel(s){}", .path.as_ref().map(|p| format!(" at {}", p.display())).unwrap_or_default())]
    ChannelCount {
        channels: usize,
        path: Option<PathBuf>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("shape error at `{key}`: {msg}")]
    Shape { key: String, msg: String },
    #[error("non-finite activation in layer `{layer}`")]
    Numerical { layer: String },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error("evaluation error: {0}")]
    Evaluation(String),
    #[error("aggregation error: {0}")]
    Aggregation(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("generation error: {0}")]
    Generation(String),
    #[error("oracle error: {0}")]
    Oracle(String),
    #[error("input error: {0}")]
    Input(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps `self` with the name of the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by invalid user-supplied configuration rather
    /// than by a failure while doing the work.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Seed { source, .. } | Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
