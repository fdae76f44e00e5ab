use std::fmt;

use super::Strategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Reconstruction pretraining of the pretrain strategies.
    Pretrain,
    Main,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Main => "main",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Epoch means of the losses evaluated during that epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based within the phase.
    pub epoch: usize,
    pub phase: Phase,
    pub strategy: Strategy,
    pub l1: Option<f64>,
    pub l2: Option<f64>,
    pub val_dice: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,phase,strategy,l1,l2,val_dice";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.9}")).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch,
                r.phase,
                r.strategy,
                cell(r.l1),
                cell(r.l2),
                cell(r.val_dice)
            ));
        }
        out
    }

    /// Per-epoch `l1` of the main phase, in order.
    pub fn main_l1(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.phase == Phase::Main)
            .filter_map(|r| r.l1)
            .collect()
    }
}
