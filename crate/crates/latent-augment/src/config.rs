//! Experiment configuration: one JSON document with a section per module,
//! every field defaulted, unknown keys rejected.

use std::path::Path;

use crate::augmentation::AugmentPolicy;
use crate::datasets::GroupingRule;
use crate::diffusion::DiffusionConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::finetune::FinetuneConfig;
use crate::numeric::fnv1a64;

/// Synthetic long-tailed dataset parameters.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub num_classes: usize,
    /// Raw input dimension.
    pub dim: usize,
    /// Head-class training count.
    pub n_max: usize,
    /// Ratio of head to tail training counts.
    pub imbalance_factor: f64,
    /// Isotropic within-class standard deviation.
    pub sigma: f64,
    /// Class means are drawn on a sphere of this radius.
    pub mean_radius: f64,
    /// Balanced test set: samples per class.
    pub test_per_class: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            num_classes: 10,
            dim: 16,
            n_max: 500,
            imbalance_factor: 100.0,
            sigma: 1.0,
            mean_radius: 3.2,
            test_per_class: 200,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if self.n_max == 0 {
            return Err(Error::Config("n_max must be positive".into()));
        }
        if !self.imbalance_factor.is_finite() || self.imbalance_factor < 1.0 {
            return Err(Error::Config(format!(
                "imbalance_factor must be >= 1, got {}",
                self.imbalance_factor
            )));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !self.mean_radius.is_finite() || self.mean_radius <= 0.0 {
            return Err(Error::Config(format!(
                "mean_radius must be > 0, got {}",
                self.mean_radius
            )));
        }
        if self.test_per_class == 0 {
            return Err(Error::Config("test_per_class must be positive".into()));
        }
        Ok(())
    }
}

/// Evaluation grouping choice.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub grouping: GroupingRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            grouping: GroupingRule::Thresholds { low: 20, high: 100 },
        }
    }
}

/// Everything a pipeline run needs: one global seed plus a section per
/// module. Per-stage randomness is derived from the seed by stable labeled
/// hashing, so stages rerun independently still reproduce the pipeline.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub encoder: EncoderConfig,
    pub diffusion: DiffusionConfig,
    pub augment: AugmentPolicy,
    pub finetune: FinetuneConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.encoder.validate()?;
        self.diffusion.validate()?;
        self.augment.validate(self.dataset.num_classes)?;
        self.finetune.validate()?;
        if let GroupingRule::Thresholds { low, high } = self.eval.grouping {
            if low >= high {
                return Err(Error::Config(format!(
                    "grouping thresholds need low < high, got ({low}, {high})"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical serialized form; fingerprints and the config.json artifact
    /// are both derived from these bytes.
    pub fn canonical_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Hex fingerprint of the canonical config bytes.
    pub fn fingerprint(&self) -> String {
        format!("{:016x}", fnv1a64(&self.canonical_json()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = String::from_utf8(cfg.canonical_json()).unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(cfg.fingerprint(), back.fingerprint());
    }

    #[test]
    fn defaults_match_stated_values() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.diffusion.num_steps, 1000);
        assert_eq!(cfg.diffusion.reverse_steps, 500);
        assert_eq!(cfg.diffusion.epochs, 200);
        assert_eq!(cfg.diffusion.batch_size, 128);
        assert_eq!(cfg.finetune.gamma, 0.05);
        assert_eq!(cfg.finetune.lr, 5e-4);
        assert_eq!(cfg.finetune.epochs, 100);
        assert_eq!(cfg.dataset.imbalance_factor, 100.0);
        assert_eq!(cfg.diffusion.eta, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let json = r#"{ "seed": 1, "no_such_section": {} }"#;
        match ExperimentConfig::from_json(json) {
            Err(Error::Config(msg)) => assert!(msg.contains("no_such_section"), "{msg}"),
            other => panic!("expected config error, got {other:?}"),
        }
        let nested = r#"{ "encoder": { "latent_dim": 8, "bogus": 3 } }"#;
        assert!(ExperimentConfig::from_json(nested).is_err());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{ "seed": 9, "finetune": { "gamma": 0.1 } }"#)
            .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.finetune.gamma, 0.1);
        assert_eq!(cfg.finetune.lr, 5e-4);
        assert_eq!(cfg.dataset.num_classes, 10);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_json(r#"{ "dataset": { "imbalance_factor": 0.5 } }"#)
            .is_err());
        assert!(
            ExperimentConfig::from_json(r#"{ "finetune": { "gamma": -1.0 } }"#).is_err()
        );
        assert!(ExperimentConfig::from_json(
            r#"{ "diffusion": { "reverse_steps": 2000 } }"#
        )
        .is_err());
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.seed = 1;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
