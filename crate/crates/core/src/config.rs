//! TOML run configuration covering training, adversarial and architecture
//! settings. Every key is optional; defaults follow the standard recipe
//! (batch 10, momentum 0.9, lr 0.01, decay 0.05, clip 5.0, dropout 0.5,
//! alpha 0.05, gamma 0.5).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversarial::AdvConfig;
use crate::network::TaggerArchitecture;
use crate::trainer::{StatsRefresh, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad config: {0}")]
    Parse(String),
    #[error("bad config value: {0}")]
    Value(String),
}

/// Architecture presets; `custom` reads the explicit dimension keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchPreset {
    English,
    Multilingual,
    LowResource,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    // optimization
    pub batch_size: usize,
    pub momentum: f64,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub clip_threshold: f64,
    pub dropout: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub average_batch: bool,
    pub stats_refresh: StatsRefresh,
    pub threads: usize,
    pub char_freq_weighting: bool,
    // adversarial
    pub alpha: f64,
    pub gamma: f64,
    pub adversarial_enabled: bool,
    // architecture
    pub arch: ArchPreset,
    pub word_dim: Option<usize>,
    pub char_dim: Option<usize>,
    pub char_hidden: Option<usize>,
    pub word_hidden: Option<usize>,
    // data handling
    pub min_count: u64,
}

impl Default for FileConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = AdvConfig::default();
        FileConfig {
            batch_size: t.batch_size,
            momentum: t.momentum,
            learning_rate: t.learning_rate,
            decay_rate: t.decay_rate,
            clip_threshold: t.clip_threshold,
            dropout: t.dropout,
            max_epochs: t.max_epochs,
            patience: t.patience,
            seed: t.seed,
            average_batch: t.average_batch,
            stats_refresh: t.stats_refresh,
            threads: t.threads,
            char_freq_weighting: t.char_freq_weighting,
            alpha: a.alpha,
            gamma: a.gamma,
            adversarial_enabled: a.enabled,
            arch: ArchPreset::English,
            word_dim: None,
            char_dim: None,
            char_hidden: None,
            word_hidden: None,
            min_count: 1,
        }
    }
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.train_config().map_err(|e| ConfigError::Value(e.to_string()))?;
        cfg.adv_config().validate().map_err(ConfigError::Value)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        let cfg = TrainConfig {
            batch_size: self.batch_size,
            momentum: self.momentum,
            learning_rate: self.learning_rate,
            decay_rate: self.decay_rate,
            clip_threshold: self.clip_threshold,
            dropout: self.dropout,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            average_batch: self.average_batch,
            stats_refresh: self.stats_refresh,
            threads: self.threads,
            char_freq_weighting: self.char_freq_weighting,
        };
        cfg.validate().map_err(|e| ConfigError::Value(e.to_string()))?;
        Ok(cfg)
    }

    pub fn adv_config(&self) -> AdvConfig {
        AdvConfig { alpha: self.alpha, gamma: self.gamma, enabled: self.adversarial_enabled }
    }

    /// Resolves the architecture for a given tag inventory. Explicit
    /// dimension keys override the preset; `custom` requires all four.
    pub fn architecture(&self, tag_count: usize) -> Result<TaggerArchitecture, ConfigError> {
        let mut arch = match self.arch {
            ArchPreset::English => TaggerArchitecture::english(tag_count),
            ArchPreset::Multilingual => TaggerArchitecture::multilingual(tag_count),
            ArchPreset::LowResource => TaggerArchitecture::low_resource(tag_count),
            ArchPreset::Custom => {
                let missing = || {
                    ConfigError::Value(
                        "custom arch requires word_dim, char_dim, char_hidden, word_hidden"
                            .to_string(),
                    )
                };
                TaggerArchitecture {
                    word_dim: self.word_dim.ok_or_else(missing)?,
                    char_dim: self.char_dim.ok_or_else(missing)?,
                    char_hidden: self.char_hidden.ok_or_else(missing)?,
                    word_hidden: self.word_hidden.ok_or_else(missing)?,
                    tag_count,
                    dropout: self.dropout,
                }
            }
        };
        if let Some(d) = self.word_dim {
            arch.word_dim = d;
        }
        if let Some(d) = self.char_dim {
            arch.char_dim = d;
        }
        if let Some(d) = self.char_hidden {
            arch.char_hidden = d;
        }
        if let Some(d) = self.word_hidden {
            arch.word_hidden = d;
        }
        arch.dropout = self.dropout;
        if [arch.word_dim, arch.char_dim, arch.char_hidden, arch.word_hidden, arch.tag_count]
            .iter()
            .any(|&d| d == 0)
        {
            return Err(ConfigError::Value("architecture extents must be positive".to_string()));
        }
        Ok(arch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_paper_defaults() {
        let cfg = FileConfig::parse("").unwrap();
        let t = cfg.train_config().unwrap();
        assert_eq!(t.batch_size, 10);
        assert_eq!(t.momentum, 0.9);
        assert_eq!(t.learning_rate, 0.01);
        assert_eq!(t.decay_rate, 0.05);
        assert_eq!(t.clip_threshold, 5.0);
        assert_eq!(t.dropout, 0.5);
        let a = cfg.adv_config();
        assert_eq!(a.alpha, 0.05);
        assert_eq!(a.gamma, 0.5);
        assert!(!a.enabled);
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = FileConfig::parse(
            "alpha = 0.01\ngamma = 0.7\nadversarial_enabled = true\nmax_epochs = 3\nstats_refresh = \"epoch\"\n",
        )
        .unwrap();
        let a = cfg.adv_config();
        assert_eq!(a.alpha, 0.01);
        assert_eq!(a.gamma, 0.7);
        assert!(a.enabled);
        assert_eq!(cfg.train_config().unwrap().max_epochs, 3);
        assert_eq!(cfg.stats_refresh, StatsRefresh::Epoch);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("learning_rte = 0.5\n").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(FileConfig::parse("gamma = 2.0\n").is_err());
        assert!(FileConfig::parse("dropout = 1.0\n").is_err());
    }

    #[test]
    fn arch_presets_resolve() {
        let cfg = FileConfig::default();
        let english = cfg.architecture(17).unwrap();
        assert_eq!((english.word_dim, english.word_hidden), (100, 200));
        let cfg = FileConfig { arch: ArchPreset::Multilingual, ..cfg };
        let multi = cfg.architecture(17).unwrap();
        assert_eq!((multi.word_dim, multi.word_hidden), (64, 150));
        let cfg = FileConfig { arch: ArchPreset::LowResource, ..cfg };
        assert_eq!(cfg.architecture(17).unwrap().word_hidden, 100);
    }

    #[test]
    fn dimension_overrides_apply() {
        let cfg = FileConfig::parse("word_dim = 8\nchar_hidden = 5\n").unwrap();
        let arch = cfg.architecture(4).unwrap();
        assert_eq!(arch.word_dim, 8);
        assert_eq!(arch.char_hidden, 5);
        assert_eq!(arch.char_dim, 30);
    }

    #[test]
    fn custom_arch_requires_all_dimensions() {
        let cfg = FileConfig::parse("arch = \"custom\"\nword_dim = 8\n").unwrap();
        assert!(matches!(cfg.architecture(4), Err(ConfigError::Value(_))));
    }
}
