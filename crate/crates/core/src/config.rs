//! Flat experiment configuration with desk and paper profiles.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{CorpusConfig, Grammar};
use crate::error::{Error, Result};
use crate::evaluation::{ClassifierConfig, RangeMode};
use crate::feature_layer::{ScalerMode, UpperLossWeights};
use crate::model::ModelConfig;
use crate::optim::OptimizerKind;
use crate::sentence_vae::DecoderConditioning;
use crate::training::{ScheduleMode, TrainingConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?}"))),
        }
    }
}

/// Every tunable of a run. Keys missing from a file take the selected
/// profile's value; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub seed: u64,
    pub seeds: Vec<u64>,

    pub corpus_seed: u64,
    pub num_classes: usize,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub max_len: usize,
    pub vocab_min_freq: usize,
    pub vocab_max_size: usize,

    pub latent_dim: usize,
    pub embed_dim: usize,
    pub posterior_hidden: Vec<usize>,
    pub decoder_embed_dim: usize,
    pub decoder_hidden: usize,
    pub decoder_per_step_input: bool,
    pub decoder_init_hidden: bool,
    pub flow_layers: usize,
    pub flow_hidden: usize,
    /// 0 selects ceil(d / 2).
    pub flow_split: usize,
    pub flow_alternating: bool,
    pub scaler: ScalerMode,

    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub schedule: ScheduleMode,
    pub cycle: u64,
    pub lag: f64,
    pub beta: f64,
    pub gamma_kl: f64,
    pub mi_window: usize,
    pub mi_epsilon: f64,
    pub mi_batch_size: usize,
    pub inner_patience: usize,
    pub inner_tolerance: f64,
    pub inner_cap: usize,
    pub freeze_decoder_phase2: bool,

    pub classifier_embed_dim: usize,
    pub classifier_hidden: usize,
    pub classifier_epochs: usize,
    pub classifier_lr: f64,
    pub classifier_seed: u64,
    pub levels: usize,
    /// 0 means strict extremes, otherwise the p / 100 - p percentiles.
    pub range_percentile: f64,
    pub samples_per_level: usize,
    pub accuracy_samples: usize,
    pub sweep_sources: usize,
    pub stopwords_file: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn desk() -> Self {
        let t = TrainingConfig::default();
        let c = ClassifierConfig::default();
        Self {
            profile: Profile::Desk,
            seed: 0,
            seeds: vec![0, 1, 2],
            corpus_seed: 7,
            num_classes: 2,
            train_size: 5000,
            val_size: 500,
            test_size: 500,
            max_len: 16,
            vocab_min_freq: 1,
            vocab_max_size: 200,
            latent_dim: 16,
            embed_dim: 32,
            posterior_hidden: vec![64],
            decoder_embed_dim: 32,
            decoder_hidden: 64,
            decoder_per_step_input: true,
            decoder_init_hidden: true,
            flow_layers: 3,
            flow_hidden: 32,
            flow_split: 0,
            flow_alternating: false,
            scaler: ScalerMode::Fixed,
            optimizer: t.optimizer,
            lr: t.lr,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            batch_size: t.batch_size,
            phase1_epochs: t.phase1_epochs,
            phase2_epochs: t.phase2_epochs,
            schedule: t.schedule,
            cycle: t.cycle,
            lag: t.lag,
            beta: t.weights.beta,
            gamma_kl: t.weights.gamma_kl,
            mi_window: t.mi_window,
            mi_epsilon: t.mi_epsilon,
            mi_batch_size: t.mi_batch_size,
            inner_patience: t.inner_patience,
            inner_tolerance: t.inner_tolerance,
            inner_cap: t.inner_cap,
            freeze_decoder_phase2: t.freeze_decoder_phase2,
            classifier_embed_dim: c.embed_dim,
            classifier_hidden: c.hidden,
            classifier_epochs: c.epochs,
            classifier_lr: c.lr,
            classifier_seed: c.seed,
            levels: 20,
            range_percentile: 0.0,
            samples_per_level: 100,
            accuracy_samples: 250,
            sweep_sources: 500,
            stopwords_file: None,
        }
    }

    /// Full-size setting: d = 256, 768-dim sentence encoding, posterior
    /// hidden 200, three coupling layers with hidden width 100,
    /// beta = gamma_kl = 10 and the fixed [-1, 1] scaler.
    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            latent_dim: 256,
            embed_dim: 768,
            posterior_hidden: vec![200],
            decoder_embed_dim: 300,
            decoder_hidden: 512,
            max_len: 32,
            vocab_max_size: 9500,
            flow_layers: 3,
            flow_hidden: 100,
            beta: 10.0,
            gamma_kl: 10.0,
            scaler: ScalerMode::Fixed,
            ..Self::desk()
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Parses TOML text on top of the profile named in it (desk when absent).
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let profile = match overlay.get("profile") {
            None => Profile::Desk,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("profile must be a string, got {other}"))),
        };
        let base = toml::Table::try_from(Self::for_profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        let mut merged = base;
        for (k, v) in overlay {
            merged.insert(k, v);
        }
        let cfg: Self = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.levels < 2 {
            return Err(Error::Config("levels must be at least 2".into()));
        }
        if !(0.0..50.0).contains(&self.range_percentile) {
            return Err(Error::Config("range_percentile must lie in [0, 50)".into()));
        }
        if self.clip_norm < 0.0 {
            return Err(Error::Config("clip_norm must be non-negative (0 disables clipping)".into()));
        }
        if self.profile == Profile::Paper {
            let pinned = [
                ("flow_layers", self.flow_layers == 3),
                ("flow_hidden", self.flow_hidden == 100),
                ("beta", self.beta == 10.0),
                ("gamma_kl", self.gamma_kl == 10.0),
                ("scaler", self.scaler == ScalerMode::Fixed),
                ("latent_dim", self.latent_dim == 256 || self.latent_dim == 300),
            ];
            if let Some((key, _)) = pinned.iter().find(|(_, ok)| !ok) {
                return Err(Error::Config(format!("{key} is pinned by the paper profile")));
            }
        }
        self.corpus_config().validate()?;
        self.model_config(self.vocab_max_size).validate()?;
        self.training_config(self.seed).validate()
    }

    pub fn corpus_config(&self) -> CorpusConfig {
        let p = 1.0 / self.num_classes.max(1) as f64;
        CorpusConfig {
            grammar: Grammar::restaurant(self.num_classes),
            num_classes: self.num_classes,
            class_probs: vec![p; self.num_classes],
            train_size: self.train_size,
            val_size: self.val_size,
            test_size: self.test_size,
            max_len: self.max_len,
            seed: self.corpus_seed,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            num_classes: self.num_classes,
            latent_dim: self.latent_dim,
            embed_dim: self.embed_dim,
            posterior_hidden: self.posterior_hidden.clone(),
            decoder_embed_dim: self.decoder_embed_dim,
            decoder_hidden: self.decoder_hidden,
            max_len: self.max_len,
            flow_layers: self.flow_layers,
            flow_hidden: self.flow_hidden,
            flow_split: if self.flow_split == 0 { self.latent_dim.div_ceil(2) } else { self.flow_split },
            flow_alternating: self.flow_alternating,
            scaler: self.scaler,
            conditioning: DecoderConditioning {
                per_step_input: self.decoder_per_step_input,
                init_hidden: self.decoder_init_hidden,
            },
            zero_init_posterior_head: false,
            init_seed: self.seed,
        }
    }

    pub fn training_config(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            optimizer: self.optimizer,
            lr: self.lr,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            batch_size: self.batch_size,
            phase1_epochs: self.phase1_epochs,
            phase2_epochs: self.phase2_epochs,
            schedule: self.schedule,
            cycle: self.cycle,
            lag: self.lag,
            weights: UpperLossWeights { beta: self.beta, gamma_kl: self.gamma_kl },
            mi_window: self.mi_window,
            mi_epsilon: self.mi_epsilon,
            mi_batch_size: self.mi_batch_size,
            inner_patience: self.inner_patience,
            inner_tolerance: self.inner_tolerance,
            inner_cap: self.inner_cap,
            freeze_decoder_phase2: self.freeze_decoder_phase2,
            seed,
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            embed_dim: self.classifier_embed_dim,
            hidden: self.classifier_hidden,
            epochs: self.classifier_epochs,
            batch_size: 64,
            lr: self.classifier_lr,
            seed: self.classifier_seed,
        }
    }

    pub fn range_mode(&self) -> RangeMode {
        if self.range_percentile == 0.0 {
            RangeMode::Strict
        } else {
            RangeMode::Percentile(self.range_percentile)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_desk_profile() {
        assert_eq!(ExperimentConfig::from_toml_str("").unwrap(), ExperimentConfig::desk());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("latent_dims = 4").unwrap_err();
        assert!(err.to_string().contains("latent_dims"), "{err}");
    }

    #[test]
    fn overrides_apply_on_top_of_profile() {
        let cfg = ExperimentConfig::from_toml_str("profile = \"paper\"\nphase2_epochs = 3").unwrap();
        assert_eq!(cfg.latent_dim, 256);
        assert_eq!(cfg.flow_hidden, 100);
        assert_eq!(cfg.phase2_epochs, 3);
        assert_eq!(cfg.model_config(100).flow_split, 128);
    }

    #[test]
    fn paper_profile_pins_its_values() {
        assert!(ExperimentConfig::from_toml_str("profile = \"paper\"\nbeta = 1.0").is_err());
        assert!(ExperimentConfig::from_toml_str("beta = 1.0").is_ok());
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let mut cfg = ExperimentConfig::desk();
        cfg.schedule = ScheduleMode::None;
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_ne!(cfg.hash(), ExperimentConfig::desk().hash());
    }
}
