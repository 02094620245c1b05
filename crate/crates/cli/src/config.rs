//! Optional TOML config file. Flags override the file, the file overrides
//! built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub task: Option<String>,
    pub arch: Option<String>,
    pub backbone: Option<String>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelSection,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub kernel: Option<usize>,
    pub stride: Option<usize>,
    pub tiny_width: Option<usize>,
    pub embedding_dim: Option<usize>,
}

pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections() {
        let cfg: FileConfig = toml::from_str(
            r#"
            task = "tools+actions"
            arch = "1c1n"
            [train]
            learning_rate = 5e-4
            epochs = 3
            [model]
            kernel = 5
            "#,
        )
        .unwrap();
        assert_eq!(cfg.task.as_deref(), Some("tools+actions"));
        assert_eq!(cfg.train.learning_rate, Some(5e-4));
        assert_eq!(cfg.model.kernel, Some(5));
        assert_eq!(cfg.train.batch_size, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("optimizer = \"sgd\"").is_err());
    }
}
