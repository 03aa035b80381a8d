//! Experiment configuration: one JSON document driving the full pipeline.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use inkwell_core::fd::FilterConfig;
use inkwell_core::sim::GenerationConfig;
use inkwell_core::sysid::SysidConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SysidSection {
    #[serde(flatten)]
    pub config: SysidConfig,
    /// Cap on the number of healthy training signals fed to the fit; the
    /// objective sums over signals, so a cap mostly buys speed.
    pub max_signals: Option<usize>,
}

impl Default for SysidSection {
    fn default() -> Self {
        Self {
            config: SysidConfig::default(),
            max_signals: Some(256),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationSection {
    /// Neighbor count of the nearest-neighbor classifier.
    pub k: usize,
    /// Per-class training-size fractions swept by the report grid.
    pub training_fractions: Vec<f64>,
}

impl Default for IsolationSection {
    fn default() -> Self {
        Self {
            k: 1,
            training_fractions: vec![1.0, 0.5, 0.1],
        }
    }
}

/// Full experiment description. Training and test datasets share the
/// generation settings and differ only in their seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generation: GenerationConfig,
    pub seed_train: u64,
    pub seed_test: u64,
    pub sysid: SysidSection,
    pub filter: FilterConfig,
    pub isolation: IsolationSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            generation: GenerationConfig::default(),
            seed_train: 1001,
            seed_test: 2002,
            sysid: SysidSection::default(),
            filter: FilterConfig::default(),
            isolation: IsolationSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.seed_train == self.seed_test {
            return Err("training and test seeds must differ".into());
        }
        if self.isolation.training_fractions.is_empty() {
            return Err("at least one training fraction is required".into());
        }
        for &f in &self.isolation.training_fractions {
            if !(f > 0.0 && f <= 1.0) {
                return Err(format!("training fraction {f} outside (0, 1]"));
            }
        }
        if self.isolation.k < 1 {
            return Err("k must be at least 1".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn load(path: &std::path::Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate().map_err(|e| anyhow::anyhow!(e))?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.digest(), cfg.digest());
    }

    #[test]
    fn partial_config_files_fill_in_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed_train": 7}"#).unwrap();
        assert_eq!(cfg.seed_train, 7);
        assert_eq!(cfg.seed_test, ExperimentConfig::default().seed_test);
    }

    #[test]
    fn invalid_fractions_are_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.isolation.training_fractions = vec![1.5];
        assert!(cfg.validate().is_err());
        cfg.isolation.training_fractions = vec![];
        assert!(cfg.validate().is_err());
    }
}
