//! Flat TOML run configuration.
//!
//! Every key is optional; an empty file yields the defaults below. Unknown
//! keys, type errors and out-of-range values are rejected with the key named.
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `name` | `"default"` | run directory name under `output_root` |
//! | `output_root` | `"runs"` | parent of run directories (env `MASSL_OUTPUT_ROOT`) |
//! | `threads` | `1` | parallel sweep folds (env `MASSL_THREADS`) |
//! | `data_path` | `"data/synthetic.bin"` | dataset file written by `synth`, read by the rest |
//! | `synth_count` | `120` | images generated by `synth` |
//! | `synth_seed` | `7` | generator seed |
//! | `height`, `width` | `64` | image extent |
//! | `folds` | `5` | Monte Carlo folds |
//! | `fold` | `0` | fold used by `train`, `eval` and `probe` |
//! | `split_seed` | `11` | split shuffling seed |
//! | `labeled`, `unlabeled`, `validation`, `test` | `2`, `40`, `8`, `10` | split sizes |
//! | `fully_supervised` | `false` | reuse the labeled pool as unlabeled data |
//! | `levels`, `base_channels`, `max_channels` | `3`, `8`, `256` | encoder depth and widths |
//! | `leaky_slope`, `norm_eps` | `0.01`, `1e-5` | activation slope, normalization epsilon |
//! | `strategy` | `"massl_alter"` | one of the seven training strategies |
//! | `gamma` | `0.7` | segmentation weight of joint strategies, in `[0, 1]` |
//! | `lr_seg`, `lr_recon` | `0.01`, `0.001` | Adam learning rates |
//! | `epochs`, `pretrain_epochs` | `60`, `20` | epoch counts |
//! | `batch_size` | `4` | minibatch size (even for joint strategies) |
//! | `seed` | `0` | model initialization and sampling seed |
//! | `augment` | `true` | random rotation, scale and flip |
//! | `max_rotation_deg`, `scale_min`, `scale_max`, `flip_prob` | `10`, `0.9`, `1.1`, `0.5` | augmentation ranges |
//! | `adam_beta1`, `adam_beta2`, `adam_eps` | `0.9`, `0.999`, `1e-8` | Adam constants |
//! | `probe_images` | `5` | test images per probe repetition |
//! | `probe_repetitions` | `5` | probe repetitions |
//! | `probe_max_voxels` | `20000` | voxel cap per level |
//! | `probe_mode` | `"in_sample"` | `in_sample` or `held_out` |
//! | `probe_seed` | `0` | probe subsampling seed |

use std::fs;
use std::path::{Path, PathBuf};

use massl_core::analysis::{ProbeMode, ProbeOptions};
use massl_core::data::SplitSizes;
use massl_core::model::NetworkConfig;
use massl_core::training::{AdamConfig, AugmentConfig, Strategy, TrainConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Key { key: String, message: String },
    #[error("config: {0}")]
    Syntax(String),
}

fn key_error(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Key {
        key: key.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub output_root: PathBuf,
    pub threads: usize,

    pub data_path: PathBuf,
    pub synth_count: usize,
    pub synth_seed: u64,
    pub height: usize,
    pub width: usize,

    pub folds: usize,
    pub fold: usize,
    pub split_seed: u64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
    pub fully_supervised: bool,

    pub levels: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    pub leaky_slope: f64,
    pub norm_eps: f64,

    pub strategy: String,
    pub gamma: f64,
    pub lr_seg: f64,
    pub lr_recon: f64,
    pub epochs: usize,
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub max_rotation_deg: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    pub flip_prob: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub probe_images: usize,
    pub probe_repetitions: usize,
    pub probe_max_voxels: usize,
    pub probe_mode: String,
    pub probe_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let aug = AugmentConfig::default();
        let adam = AdamConfig::default();
        let train = TrainConfig::new(Strategy::MasslAlter);
        let probe = ProbeOptions::default();
        Self {
            name: "default".into(),
            output_root: "runs".into(),
            threads: 1,
            data_path: "data/synthetic.bin".into(),
            synth_count: 120,
            synth_seed: 7,
            height: net.height,
            width: net.width,
            folds: 5,
            fold: 0,
            split_seed: 11,
            labeled: 2,
            unlabeled: 40,
            validation: 8,
            test: 10,
            fully_supervised: false,
            levels: net.levels,
            base_channels: net.base_channels,
            max_channels: net.max_channels,
            leaky_slope: net.leaky_slope,
            norm_eps: net.norm_eps,
            strategy: train.strategy.to_string(),
            gamma: 0.7,
            lr_seg: train.lr_seg,
            lr_recon: train.lr_recon,
            epochs: train.epochs,
            pretrain_epochs: train.pretrain_epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            augment: aug.enabled,
            max_rotation_deg: aug.max_rotation_deg,
            scale_min: aug.scale_min,
            scale_max: aug.scale_max,
            flip_prob: aug.flip_prob,
            adam_beta1: adam.beta1,
            adam_beta2: adam.beta2,
            adam_eps: adam.eps,
            probe_images: 5,
            probe_repetitions: 5,
            probe_max_voxels: probe.max_voxels,
            probe_mode: ProbeMode::InSample.as_str().into(),
            probe_seed: probe.seed,
        }
    }
}

/// Parses and validates a config document.
pub fn parse_config_str(text: &str) -> Result<RunConfig, ConfigError> {
    let de = toml::Deserializer::parse(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let key = e.path().to_string();
        let message = e.inner().message().to_string();
        if key == "." {
            // Unknown keys surface at the document root; the message names them.
            ConfigError::Syntax(message)
        } else {
            ConfigError::Key { key, message }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.display().to_string(),
        source,
    })?;
    parse_config_str(&text)
}

impl RunConfig {
    /// The effective configuration as a TOML document that parses back to `self`.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Applies `MASSL_OUTPUT_ROOT` and `MASSL_THREADS` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(root) = lookup("MASSL_OUTPUT_ROOT") {
            self.output_root = root.into();
        }
        if let Some(raw) = lookup("MASSL_THREADS") {
            self.threads = raw
                .parse()
                .map_err(|_| key_error("threads", format!("MASSL_THREADS=`{raw}` is not a count")))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("threads", self.threads),
            ("synth_count", self.synth_count),
            ("folds", self.folds),
            ("labeled", self.labeled),
            ("test", self.test),
            ("probe_images", self.probe_images),
            ("probe_repetitions", self.probe_repetitions),
            ("probe_max_voxels", self.probe_max_voxels),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(key_error(key, "must be positive"));
            }
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." || self.name == "." {
            return Err(key_error("name", "must be a plain directory name"));
        }
        if self.fold >= self.folds {
            return Err(key_error("fold", format!("must be below folds = {}", self.folds)));
        }
        let needed =
            self.labeled + if self.fully_supervised { 0 } else { self.unlabeled } + self.validation + self.test;
        if needed > self.synth_count {
            return Err(key_error(
                "synth_count",
                format!(
                    "splits need {needed} images but only {} are generated",
                    self.synth_count
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(key_error("gamma", format!("must lie in [0, 1], got {}", self.gamma)));
        }
        self.strategy().map_err(|m| key_error("strategy", m))?;
        self.probe_options().map_err(|m| key_error("probe_mode", m))?;
        if self.levels < 2 {
            return Err(key_error("levels", format!("must be at least 2, got {}", self.levels)));
        }
        if self.base_channels == 0 {
            return Err(key_error("base_channels", "must be positive"));
        }
        if self.max_channels < self.base_channels {
            return Err(key_error("max_channels", "must be at least base_channels"));
        }
        let factor = 1usize.checked_shl(self.levels as u32 - 1).unwrap_or(0);
        for (key, extent) in [("height", self.height), ("width", self.width)] {
            if factor == 0 || extent == 0 || extent % factor != 0 {
                return Err(key_error(
                    key,
                    format!("{extent} is not a positive multiple of 2^(levels-1)"),
                ));
            }
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(key_error(
                "leaky_slope",
                format!("must lie in [0, 1), got {}", self.leaky_slope),
            ));
        }
        if !(self.norm_eps > 0.0) {
            return Err(key_error("norm_eps", "must be positive"));
        }
        for (key, v) in [("lr_seg", self.lr_seg), ("lr_recon", self.lr_recon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(key_error(key, format!("must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(key_error("batch_size", "must be positive"));
        }
        if !self.batch_size.is_multiple_of(2) && self.strategy().is_ok_and(Strategy::is_joint) {
            return Err(key_error("batch_size", "joint strategies need an even batch size"));
        }
        if !(0.0..=180.0).contains(&self.max_rotation_deg) {
            return Err(key_error("max_rotation_deg", "must lie in [0, 180]"));
        }
        if !(self.scale_min > 0.0) {
            return Err(key_error("scale_min", "must be positive"));
        }
        if !(self.scale_max >= self.scale_min && self.scale_max.is_finite()) {
            return Err(key_error("scale_max", "must be finite and at least scale_min"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(key_error("flip_prob", "must lie in [0, 1]"));
        }
        for (key, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(key_error(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(key_error("adam_eps", "must be positive"));
        }
        // Backstop: anything the checks above missed.
        self.network()
            .validate()
            .map_err(|e| key_error("levels", e.to_string()))?;
        self.train_config(self.strategy().expect("checked above"))
            .validate()
            .map_err(|e| ConfigError::Syntax(e.to_string()))?;
        Ok(())
    }

    pub fn strategy(&self) -> Result<Strategy, String> {
        self.strategy.parse()
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            max_channels: self.max_channels,
            height: self.height,
            width: self.width,
            leaky_slope: self.leaky_slope,
            norm_eps: self.norm_eps,
            ..NetworkConfig::default()
        }
    }

    /// Training settings for `strategy`; `gamma` is attached only to joint ones.
    pub fn train_config(&self, strategy: Strategy) -> TrainConfig {
        TrainConfig {
            strategy,
            gamma: strategy.is_joint().then_some(self.gamma),
            lr_seg: self.lr_seg,
            lr_recon: self.lr_recon,
            epochs: self.epochs,
            pretrain_epochs: self.pretrain_epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            augment: AugmentConfig {
                enabled: self.augment,
                max_rotation_deg: self.max_rotation_deg,
                scale_min: self.scale_min,
                scale_max: self.scale_max,
                flip_prob: self.flip_prob,
            },
            adam: AdamConfig {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            labeled: self.labeled,
            unlabeled: self.unlabeled,
            validation: self.validation,
            test: self.test,
        }
    }

    pub fn probe_options(&self) -> Result<ProbeOptions, String> {
        let mode = match self.probe_mode.as_str() {
            "in_sample" => ProbeMode::InSample,
            "held_out" => ProbeMode::HeldOut,
            other => return Err(format!("unknown probe mode `{other}`; expected in_sample or held_out")),
        };
        Ok(ProbeOptions {
            max_voxels: self.probe_max_voxels,
            seed: self.probe_seed,
            mode,
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_root.join(&self.name)
    }
}
