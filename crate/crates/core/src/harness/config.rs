//! Experiment configuration: one serializable document that pins every
//! hyperparameter of a run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nets::TrainConfig;
use crate::rng::RngStream;
use crate::shiftgen::SuiteConfig;
use crate::uq::EpisodeConfig;

/// Config schema version accepted by this build.
pub const CONFIG_VERSION: u32 = 1;

/// Architecture plus training recipe for one gradient-trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    /// Hidden layer widths, input and output layers excluded.
    pub hidden_dims: Vec<usize>,
    /// One dropout rate per hidden layer.
    pub dropout_rates: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            hidden_dims: vec![16],
            dropout_rates: vec![0.0],
            train: TrainConfig::default(),
        }
    }
}

impl ModelSpec {
    /// Full layer-dimension vector for a given task shape.
    pub fn layer_dims(&self, input_dim: usize, class_count: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(class_count);
        dims
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "model spec needs at least one hidden layer".into(),
            ));
        }
        if self.dropout_rates.len() != self.hidden_dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_dims.len()
            )));
        }
        self.train.validate()
    }
}

/// The whole experiment in one document.
///
/// Seed policy: `master_seed` is the only seed consulted at run time.
/// The runner derives a child seed per stage and writes it into the
/// relevant sub-config, overriding whatever seed the sub-config itself
/// carries, so a saved config pins a run with a single number.
///
/// Field order keeps plain values ahead of tables so the document
/// serializes to TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub version: u32,
    pub master_seed: u64,
    /// Class the ranking metrics treat as positive.
    pub positive_class: usize,
    /// Fraction of the training pool held out for validation.
    pub val_fraction: f64,
    /// Stochastic forward passes per sample at prediction time.
    pub mc_passes: usize,
    /// Embedding network hidden widths; the last entry is the embedding
    /// dimension.
    pub fsl_hidden_dims: Vec<usize>,
    pub fsl_dropout_rates: Vec<f64>,
    pub suite: SuiteConfig,
    pub baseline: ModelSpec,
    pub mc_dropout: ModelSpec,
    pub episodes: EpisodeConfig,
    /// One spec per ensemble member; widths differ so members disagree
    /// away from the training data.
    pub ensemble: Vec<ModelSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let member = |width: usize| ModelSpec {
            hidden_dims: vec![width],
            dropout_rates: vec![0.0],
            train: TrainConfig::default(),
        };
        ExperimentConfig {
            version: CONFIG_VERSION,
            master_seed: 42,
            positive_class: 1,
            val_fraction: 0.2,
            mc_passes: 50,
            fsl_hidden_dims: vec![32, 16],
            fsl_dropout_rates: vec![0.0, 0.0],
            suite: SuiteConfig::default(),
            baseline: ModelSpec::default(),
            mc_dropout: ModelSpec {
                hidden_dims: vec![32, 16],
                dropout_rates: vec![0.25, 0.5],
                train: TrainConfig::default(),
            },
            episodes: EpisodeConfig::default(),
            ensemble: vec![member(8), member(12), member(16), member(24), member(32)],
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "config version {} (this build reads {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.positive_class > 1 {
            return Err(Error::InvalidConfig(format!(
                "positive class {} in a binary task",
                self.positive_class
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        if self.mc_passes == 0 {
            return Err(Error::InvalidConfig("zero stochastic passes".into()));
        }
        if self.fsl_hidden_dims.is_empty() {
            return Err(Error::InvalidConfig(
                "embedding network needs at least one hidden layer".into(),
            ));
        }
        if self.fsl_dropout_rates.len() != self.fsl_hidden_dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} dropout rates for {} embedding layers",
                self.fsl_dropout_rates.len(),
                self.fsl_hidden_dims.len()
            )));
        }
        if self.ensemble.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "{} ensemble members; need at least 2",
                self.ensemble.len()
            )));
        }
        self.suite.validate()?;
        self.baseline.validate()?;
        self.mc_dropout.validate()?;
        for spec in &self.ensemble {
            spec.validate()?;
        }
        self.episodes.validate()
    }

    /// Child seed for one named stage of the run.
    pub fn stage_seed(&self, stream: u64, salt: u64) -> u64 {
        RngStream::derive_seed(self.master_seed, stream, salt)
    }
}

/// Read and validate a TOML config file. Missing keys fall back to
/// defaults, so a partial file overrides only what it names.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let cfg: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn save_config(cfg: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::InvalidConfig(format!("unserializable config: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Content hash of the config's canonical TOML form. Stored in reports
/// so a result can be traced back to the exact settings that made it.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let text = toml::to_string(cfg)
        .map_err(|e| Error::InvalidConfig(format!("unserializable config: {e}")))?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        let cfg = ExperimentConfig::default();
        save_config(&cfg, &path).unwrap();
        let back = load_config(&path).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_file_keeps_defaults_elsewhere() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        fs::write(&path, "master_seed = 7\nmc_passes = 10\n").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.mc_passes, 10);
        assert_eq!(cfg.ensemble.len(), 5);
        assert_eq!(cfg.val_fraction, 0.2);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let cfg = ExperimentConfig::default();
        let h1 = config_hash(&cfg).unwrap();
        let h2 = config_hash(&cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 64);

        let mut other = cfg.clone();
        other.master_seed += 1;
        assert_ne!(config_hash(&other).unwrap(), h1);
    }

    #[test]
    fn rejects_bad_fields() {
        let cfg = ExperimentConfig {
            version: 2,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = ExperimentConfig {
            val_fraction: 1.0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.ensemble.truncate(1);
        assert!(cfg.validate().is_err());

        let cfg = ExperimentConfig {
            fsl_dropout_rates: vec![0.0],
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());

        let cfg = ExperimentConfig {
            mc_passes: 0,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn model_spec_layer_dims_bracket_hidden_layers() {
        let spec = ModelSpec {
            hidden_dims: vec![32, 16],
            dropout_rates: vec![0.0, 0.0],
            train: TrainConfig::default(),
        };
        assert_eq!(spec.layer_dims(8, 2), vec![8, 32, 16, 2]);
    }

    #[test]
    fn stage_seeds_differ_per_salt() {
        let cfg = ExperimentConfig::default();
        assert_ne!(cfg.stage_seed(4, 10), cfg.stage_seed(4, 11));
    }
}
