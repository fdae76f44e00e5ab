//! Monte Carlo cross-validation splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub labeled: usize,
    pub unlabeled: usize,
    pub validation: usize,
    pub test: usize,
}

/// Sample ids assigned to each role for one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub fold: usize,
    pub seed: u64,
    pub labeled: Vec<String>,
    /// Equal to `labeled` in fully-supervised mode, disjoint from it otherwise.
    pub unlabeled: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    pub fn fully_supervised(&self) -> bool {
        self.labeled == self.unlabeled
    }
}

/// Draws `folds` independent random partitions of `ids`.
///
/// In fully-supervised mode the unlabeled role reuses the labeled ids and
/// `sizes.unlabeled` is ignored; otherwise all four roles are disjoint.
pub fn make_splits(
    ids: &[String],
    folds: usize,
    sizes: SplitSizes,
    seed: u64,
    fully_supervised: bool,
) -> Result<Vec<SplitPlan>, DataError> {
    let unlabeled = if fully_supervised { 0 } else { sizes.unlabeled };
    let needed = sizes.labeled + unlabeled + sizes.validation + sizes.test;
    if needed > ids.len() {
        return Err(DataError::Split(format!(
            "split sizes need {needed} samples but only {} are available",
            ids.len()
        )));
    }
    if folds == 0 {
        return Err(DataError::Split("fold count must be positive".into()));
    }
    let mut sorted = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != ids.len() {
        return Err(DataError::Split("sample ids are not unique".into()));
    }
    Ok((0..folds)
        .map(|fold| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fold as u64);
            let mut order = sorted.clone();
            order.shuffle(&mut rng);
            let mut rest = order.into_iter();
            let mut take = |n: usize| rest.by_ref().take(n).collect::<Vec<_>>();
            let labeled = take(sizes.labeled);
            let unlabeled = if fully_supervised {
                labeled.clone()
            } else {
                take(unlabeled)
            };
            let validation = take(sizes.validation);
            let test = take(sizes.test);
            SplitPlan {
                fold,
                seed,
                labeled,
                unlabeled,
                validation,
                test,
            }
        })
        .collect())
}
