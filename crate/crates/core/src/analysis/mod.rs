//! Evaluation metrics, the linear feature probe and significance testing.

mod compare;
mod dice;
mod probe;
mod stats;

pub use compare::{compare_strategies, ComparisonReport, StrategyRuns, StrategySummary};
pub use dice::dice_score;
pub use probe::{
    ols_r2, pool_labels, probe_r2, FeatureMap, LevelProbe, ProbeMode, ProbeOptions, ProbeResult, ProbeSummary,
};
pub use stats::{t_test_two_sided, TTest};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
}
