//! Experiment configuration: a flat TOML document with strict keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::ScheduleKind;
use crate::error::{Error, Result};
use crate::graph::{DatasetName, FeaturePolicy};
use crate::networks::{DenoiserConfig, EncoderConfig, ModelConfig};

/// Environment variable naming the dataset cache root.
pub const DATA_ROOT_ENV: &str = "DDGAE_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::Config(format!("unknown precision {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetName,
    /// Cache root; falls back to `$DDGAE_DATA`, then `~/.cache/ddgae`.
    pub data_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub precision: Precision,
    /// Use only the first `n` graphs.
    pub subset: Option<usize>,
    /// Graphs with more nodes are dropped.
    pub max_nodes: Option<usize>,
    pub feature_policy: Option<FeaturePolicy>,
    pub feature_width: Option<usize>,

    pub timesteps: usize,
    pub schedule: ScheduleKind,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Write a checkpoint every `n` optimizer steps; 0 means epoch ends only.
    pub checkpoint_every: usize,

    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub unet_channels: Vec<usize>,
    pub time_embed_dim: usize,
    pub cond_embed_dim: usize,
    pub tap_dim: usize,

    pub extract_t: usize,
    pub eval_seed: u64,
    pub folds: usize,
    pub inner_folds: usize,
    pub svm_c_grid: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetName::ImdbBinary,
            data_root: None,
            out_dir: PathBuf::from("runs"),
            precision: Precision::F32,
            subset: None,
            max_nodes: None,
            feature_policy: None,
            feature_width: None,
            timesteps: 32,
            schedule: ScheduleKind::AbsorbingLinear,
            lambda: 0.001,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 200,
            seed: 0,
            checkpoint_every: 0,
            encoder_layers: 3,
            encoder_hidden: 128,
            embed_dim: 64,
            unet_channels: vec![32, 64, 128],
            time_embed_dim: 64,
            cond_embed_dim: 128,
            tap_dim: 64,
            extract_t: 1,
            eval_seed: 0,
            folds: 10,
            inner_folds: 5,
            svm_c_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0],
        }
    }
}

fn short_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config serialises");
    hex::encode(&Sha256::digest(&json)[..8])
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.timesteps == 0 {
            return bad("timesteps must be >= 1");
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return bad("lambda must be a finite non-negative number");
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.encoder_layers == 0 || self.encoder_hidden == 0 || self.embed_dim == 0 {
            return bad("encoder sizes must be positive");
        }
        if self.unet_channels.is_empty() || self.unet_channels.contains(&0) {
            return bad("unet_channels must be a non-empty list of positive widths");
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 == 1 {
            return bad("time_embed_dim must be positive and even");
        }
        if self.cond_embed_dim == 0 || self.tap_dim == 0 {
            return bad("embedding widths must be positive");
        }
        if self.extract_t > self.timesteps {
            return bad("extract_t must lie in [0, timesteps]");
        }
        if self.folds < 2 || self.inner_folds < 2 {
            return bad("folds and inner_folds must be >= 2");
        }
        if self.svm_c_grid.is_empty() || self.svm_c_grid.iter().any(|c| c.is_nan() || *c <= 0.0) {
            return bad("svm_c_grid must hold positive values");
        }
        if self.feature_width == Some(0) || self.max_nodes == Some(0) || self.subset == Some(0) {
            return bad("feature_width, max_nodes and subset must be positive when set");
        }
        Ok(())
    }

    /// Content hash over every setting except filesystem locations.
    pub fn config_hash(&self) -> String {
        let mut view = self.clone();
        view.data_root = None;
        view.out_dir = PathBuf::new();
        short_hash(&view)
    }

    /// Hash of the settings that determine the training trajectory. Two
    /// configs with the same fingerprint may resume each other's runs.
    pub fn training_fingerprint(&self) -> String {
        let mut view = self.clone();
        view.data_root = None;
        view.out_dir = PathBuf::new();
        view.epochs = 0;
        view.checkpoint_every = 0;
        view.extract_t = 0;
        view.eval_seed = 0;
        view.folds = 0;
        view.inner_folds = 0;
        view.svm_c_grid.clear();
        short_hash(&view)
    }

    pub fn data_root(&self) -> PathBuf {
        if let Some(p) = &self.data_root {
            return p.clone();
        }
        if let Some(p) = std::env::var_os(DATA_ROOT_ENV) {
            return PathBuf::from(p);
        }
        let home = std::env::var_os("HOME")
            .map(PathBuf::from)
            .unwrap_or_default();
        home.join(".cache").join("ddgae")
    }

    pub fn model_config(&self, feature_width: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                in_dim: feature_width,
                hidden: self.encoder_hidden,
                out_dim: self.embed_dim,
                layers: self.encoder_layers,
            },
            denoiser: DenoiserConfig {
                channels: self.unet_channels.clone(),
                time_dim: self.time_embed_dim,
                z_dim: self.embed_dim,
                emb_dim: self.cond_embed_dim,
                tap_dim: self.tap_dim,
            },
        }
    }

    pub fn size_multiple(&self) -> usize {
        1 << self.unet_channels.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.config_hash(), back.config_hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("dataset = \"PROTEINS\"\nlearning_rat = 0.1\n");
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_key_order_and_paths() {
        let a = ExperimentConfig::from_toml_str(
            "dataset = \"PROTEINS\"\nepochs = 30\nseed = 4\nout_dir = \"a\"\n",
        )
        .unwrap();
        let b = ExperimentConfig::from_toml_str(
            "seed = 4\nout_dir = \"elsewhere\"\nepochs = 30\ndataset = \"PROTEINS\"\n",
        )
        .unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c = ExperimentConfig::from_toml_str("seed = 5\nepochs = 30\ndataset = \"PROTEINS\"\n")
            .unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }

    #[test]
    fn fingerprint_ignores_epochs() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig {
            epochs: 3,
            ..ExperimentConfig::default()
        };
        assert_ne!(a.config_hash(), b.config_hash());
        assert_eq!(a.training_fingerprint(), b.training_fingerprint());
        let c = ExperimentConfig {
            lambda: 0.5,
            ..ExperimentConfig::default()
        };
        assert_ne!(a.training_fingerprint(), c.training_fingerprint());
    }

    #[test]
    fn invalid_values_rejected() {
        for doc in [
            "timesteps = 0",
            "lambda = -1.0",
            "time_embed_dim = 7",
            "extract_t = 40",
            "folds = 1",
            "unet_channels = []",
        ] {
            assert!(ExperimentConfig::from_toml_str(doc).is_err(), "{doc}");
        }
    }
}
