//! Run configuration file.
//!
//! TOML with top-level `dataset`, `format`, `embeddings`, `out_dir` and
//! `no_cache` keys, a `[fallback]` table for the hashing featurizer and a
//! `[train]` table holding every training setting. Missing keys take their
//! defaults; unknown keys are rejected.
//!
//! ```toml
//! dataset = "data/users.jsonl"
//! format = "jsonl"
//! out_dir = "out"
//!
//! [fallback]
//! dim = 64
//!
//! [train]
//! tau = 0.9
//! mlp_widths = [64, 32]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetFormat;
use crate::sage::TrainConfig;

/// Settings for the hashing featurizer used when no embedding file is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FallbackSettings {
    pub dim: usize,
    pub seed: u64,
}

impl Default for FallbackSettings {
    fn default() -> Self {
        FallbackSettings { dim: 64, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub format: DatasetFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub no_cache: bool,
    pub fallback: FallbackSettings,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            format: DatasetFormat::default(),
            embeddings: None,
            out_dir: PathBuf::from("out"),
            no_cache: false,
            fallback: FallbackSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_toml()?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.fallback.dim == 0 {
            return Err(Error::Config("fallback.dim must be >= 1".into()));
        }
        // TOML integers are signed 64-bit
        if self.train.seed > i64::MAX as u64 || self.fallback.seed > i64::MAX as u64 {
            return Err(Error::Config("seeds must fit in a signed 64-bit integer".into()));
        }
        self.train.validate()
    }

    /// Dataset path, or a `Config` error naming the flag that sets it.
    pub fn require_dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("no dataset given; pass --dataset <PATH>".into()))
    }
}

/// Parses the contents of a `[train]` table on its own, e.g. `epochs = 50`.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{AuxField, Pooling};
    use crate::sage::IsolatedPolicy;

    #[test]
    fn round_trips() {
        let mut cfg = RunConfig {
            dataset: Some("data/x.jsonl".into()),
            format: DatasetFormat::PanXmlDir,
            embeddings: Some("e.rgbe".into()),
            ..RunConfig::default()
        };
        cfg.train.tau = 0.1 + 0.2;
        cfg.train.pooling = Pooling::Avg;
        cfg.train.isolated = IsolatedPolicy::SelfFeatures;
        cfg.train.aux_fields = vec![AuxField::Friends];
        cfg.train.learning_rate = 1.0 / 3.0;
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn defaults_fill_gaps() {
        let cfg = RunConfig::from_toml("format = \"cresci-csv\"\n[train]\nepochs = 5\n").unwrap();
        assert_eq!(cfg.format, DatasetFormat::CresciCsv);
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.train.mlp_widths, vec![64, 32]);
        assert!(cfg.dataset.is_none());
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(RunConfig::from_toml("colour = 1"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\ntau = 2.0"), Err(Error::Config(_))));
        assert!(matches!(RunConfig::from_toml("[train]\nlr = 0.1"), Err(Error::Config(_))));
    }

    #[test]
    fn bare_train_table() {
        let t = parse_train_config("epochs = 7\nuse_sage = false\n").unwrap();
        assert_eq!((t.epochs, t.use_sage), (7, false));
        assert!(parse_train_config("").unwrap() == TrainConfig::default());
        assert!(parse_train_config("dropout = 1.5").is_err());
    }

    #[test]
    fn missing_dataset_names_the_flag() {
        let err = RunConfig::default().require_dataset().unwrap_err();
        assert!(err.to_string().contains("--dataset"));
        assert_eq!(err.exit_code(), 2);
    }
}
