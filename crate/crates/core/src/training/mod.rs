//! Optimizers, augmentation and the seven training strategies.

mod adam;
mod augment;
mod log;
mod trainer;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use adam::{adam_update, AdamConfig, AdamState};
pub use augment::{augment, AugmentConfig, Transform};
pub use log::{EpochRecord, Phase, TrainLog};
pub use trainer::{
    evaluate_dice, joint_step, reconstruction_step, run_strategy, segmentation_step, train_alternating, train_joint,
    Batch, NoObserver, ReconKind, StepKind, StepObserver, TrainData, TrainOutcome,
};

use crate::losses::LossError;
use crate::model::{ModelError, NetworkConfig};
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no gradient for parameter `{0}`")]
    MissingGradient(String),
    #[error("{strategy} diverged: non-finite loss in {phase} epoch {epoch}")]
    Diverged {
        strategy: Strategy,
        phase: Phase,
        epoch: usize,
        /// Epochs completed before the failure.
        log: Box<TrainLog>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Cnn,
    PretrainDec,
    PretrainCnn,
    MsslJoint,
    MsslAlter,
    MasslJoint,
    MasslAlter,
}

impl Strategy {
    pub const ALL: [Strategy; 7] = [
        Strategy::Cnn,
        Strategy::PretrainDec,
        Strategy::PretrainCnn,
        Strategy::MsslJoint,
        Strategy::MsslAlter,
        Strategy::MasslJoint,
        Strategy::MasslAlter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cnn => "cnn",
            Self::PretrainDec => "pretrain_dec",
            Self::PretrainCnn => "pretrain_cnn",
            Self::MsslJoint => "mssl_joint",
            Self::MsslAlter => "mssl_alter",
            Self::MasslJoint => "massl_joint",
            Self::MasslAlter => "massl_alter",
        }
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Self::MsslJoint | Self::MasslJoint)
    }

    pub fn is_alternating(self) -> bool {
        matches!(self, Self::MsslAlter | Self::MasslAlter)
    }

    pub fn is_pretrain(self) -> bool {
        matches!(self, Self::PretrainDec | Self::PretrainCnn)
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Self::Cnn
    }

    /// Reconstruction target used when unlabeled data is involved.
    pub fn recon_kind(self) -> ReconKind {
        match self {
            Self::MasslJoint | Self::MasslAlter => ReconKind::Attention,
            _ => ReconKind::Plain,
        }
    }

    /// Output channels of the reconstruction head: two for the split
    /// foreground/background targets, one for the raw image.
    pub fn recon_channels(self) -> usize {
        match self.recon_kind() {
            ReconKind::Attention => 2,
            ReconKind::Plain => 1,
        }
    }

    /// `net` with the reconstruction head sized for this strategy.
    pub fn network(self, net: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            recon_channels: self.recon_channels(),
            ..net.clone()
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Weight of the segmentation loss; set exactly for joint strategies.
    pub gamma: Option<f64>,
    pub lr_seg: f64,
    pub lr_recon: f64,
    pub epochs: usize,
    /// Reconstruction epochs before segmentation training (pretrain strategies).
    pub pretrain_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            gamma: strategy.is_joint().then_some(0.7),
            lr_seg: 0.01,
            lr_recon: 0.001,
            epochs: 60,
            pretrain_epochs: 20,
            batch_size: 4,
            seed: 0,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        match (self.strategy.is_joint(), self.gamma) {
            (true, None) => return bad(format!("{} requires gamma", self.strategy)),
            (false, Some(_)) => {
                return bad(format!(
                    "gamma is only valid for joint strategies, not {}",
                    self.strategy
                ))
            }
            (true, Some(g)) if !(0.0..=1.0).contains(&g) => return bad(format!("gamma must lie in [0, 1], got {g}")),
            _ => {}
        }
        for (name, lr) in [("lr_seg", self.lr_seg), ("lr_recon", self.lr_recon)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.strategy.is_joint() && !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "joint training splits batches evenly; batch_size {} is odd",
                self.batch_size
            ));
        }
        self.augment.validate().map_err(TrainError::Config)?;
        self.adam.validate().map_err(TrainError::Config)
    }
}
