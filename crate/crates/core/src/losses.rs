//! Segmentation and reconstruction objectives.
//!
//! All losses are recorded on the caller's [`Graph`] and return the scalar loss
//! node, so any combination of them can be differentiated in one backward pass.

use thiserror::Error;

use crate::scalar::Scalar;
use crate::tensor::{Graph, TensorError, TensorId};

/// Additive smoothing in the soft Dice numerator and denominator.
pub const DICE_SMOOTH: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("segmentation target must be binary, found {0}")]
    NonBinaryTarget(f64),
    #[error("gamma must lie in [0, 1], got {0}")]
    Gamma(f64),
}

/// Gradient-blocked soft masks taken from a segmentation prediction.
#[derive(Debug, Clone, Copy)]
pub struct AttentionMasks {
    pub foreground: TensorId,
    pub background: TensorId,
}

impl AttentionMasks {
    /// `foreground = stop_gradient(prediction)`, `background = 1 - foreground`.
    pub fn from_prediction<T: Scalar>(g: &mut Graph<T>, prediction: TensorId) -> Self {
        let foreground = g.stop_gradient(prediction);
        let background = g.rsub_scalar(T::one(), foreground);
        Self { foreground, background }
    }
}

/// Scalar diagnostics of one reconstruction loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReconTerms {
    pub l2: f64,
    /// Batch mean of `fg_weight_i * MSE_i(fg)`.
    pub fg_term: f64,
    pub bg_term: f64,
    /// Batch mean of the foreground mask fraction.
    pub fg_weight: f64,
    pub bg_weight: f64,
}

/// Per-step loss values; fields are `None` where a loss was not evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l1: Option<f64>,
    pub recon: Option<ReconTerms>,
    pub combined: f64,
}

impl LossReport {
    pub fn l2(&self) -> Option<f64> {
        self.recon.map(|r| r.l2)
    }
}

/// Soft Dice loss `1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s)` over the whole batch.
pub fn dice_loss<T: Scalar>(g: &mut Graph<T>, prediction: TensorId, target: TensorId) -> Result<TensorId, LossError> {
    if g.shape(prediction) != g.shape(target) {
        return Err(TensorError::ShapeMismatch {
            op: "dice_loss",
            left: g.shape(prediction).to_vec(),
            right: g.shape(target).to_vec(),
        }
        .into());
    }
    if let Some(&bad) = g.value(target).iter().find(|&&v| v != T::zero() && v != T::one()) {
        return Err(LossError::NonBinaryTarget(bad.as_f64()));
    }
    let smooth = T::of(DICE_SMOOTH);
    let overlap = g.mul(prediction, target)?;
    let overlap = g.sum(overlap);
    let numerator = g.scale(overlap, T::of(2.0));
    let numerator = g.add_scalar(numerator, smooth);
    let sp = g.sum(prediction);
    let st = g.sum(target);
    let denominator = g.add(sp, st)?;
    let denominator = g.add_scalar(denominator, smooth);
    let ratio = g.div(numerator, denominator)?;
    Ok(g.rsub_scalar(T::one(), ratio))
}

/// Splits a two-channel reconstruction into `(background, foreground)`.
pub fn split_reconstruction<T: Scalar>(g: &mut Graph<T>, recon: TensorId) -> Result<(TensorId, TensorId), LossError> {
    let bg = g.slice_channels(recon, 0, 1)?;
    let fg = g.slice_channels(recon, 1, 1)?;
    Ok((bg, fg))
}

/// Attention-masked reconstruction loss.
///
/// Per image `i` with `n` voxels:
/// `L2_i = (sum(bg)/n) MSE(recon_bg, x*bg) + (sum(fg)/n) MSE(recon_fg, x*fg)`,
/// then averaged over the batch. Masks must come from [`AttentionMasks`].
pub fn attention_recon_loss<T: Scalar>(
    g: &mut Graph<T>,
    image: TensorId,
    recon_bg: TensorId,
    recon_fg: TensorId,
    masks: AttentionMasks,
) -> Result<(TensorId, ReconTerms), LossError> {
    for other in [recon_bg, recon_fg, masks.foreground, masks.background] {
        if g.shape(other) != g.shape(image) {
            return Err(TensorError::ShapeMismatch {
                op: "attention_recon_loss",
                left: g.shape(image).to_vec(),
                right: g.shape(other).to_vec(),
            }
            .into());
        }
    }
    let term = |g: &mut Graph<T>, recon: TensorId, mask: TensorId| -> Result<_, LossError> {
        let weight = g.mean_per_sample(mask);
        let target = g.mul(image, mask)?;
        let residual = g.sub(recon, target)?;
        let sq = g.square(residual);
        let mse = g.mean_per_sample(sq);
        let weighted = g.mul(weight, mse)?;
        Ok((weight, weighted))
    };
    let (bg_w, bg_term) = term(g, recon_bg, masks.background)?;
    let (fg_w, fg_term) = term(g, recon_fg, masks.foreground)?;
    let total = g.add(bg_term, fg_term)?;
    let loss = g.mean(total);
    let batch_mean = |g: &Graph<T>, id: TensorId| {
        let v = g.value(id);
        v.iter().map(|x| x.as_f64()).sum::<f64>() / v.len() as f64
    };
    let terms = ReconTerms {
        l2: g.item(loss).as_f64(),
        fg_term: batch_mean(g, fg_term),
        bg_term: batch_mean(g, bg_term),
        fg_weight: batch_mean(g, fg_w),
        bg_weight: batch_mean(g, bg_w),
    };
    Ok((loss, terms))
}

/// Mean squared error between a reconstruction and its input image.
pub fn plain_recon_loss<T: Scalar>(g: &mut Graph<T>, image: TensorId, recon: TensorId) -> Result<TensorId, LossError> {
    if g.shape(recon) != g.shape(image) {
        return Err(TensorError::ShapeMismatch {
            op: "plain_recon_loss",
            left: g.shape(image).to_vec(),
            right: g.shape(recon).to_vec(),
        }
        .into());
    }
    let residual = g.sub(recon, image)?;
    let sq = g.square(residual);
    Ok(g.mean(sq))
}

pub fn check_gamma(gamma: f64) -> Result<(), LossError> {
    if (0.0..=1.0).contains(&gamma) {
        Ok(())
    } else {
        Err(LossError::Gamma(gamma))
    }
}

/// `gamma * l1 + (1 - gamma) * l2`.
pub fn joint_loss<T: Scalar>(g: &mut Graph<T>, l1: TensorId, l2: TensorId, gamma: f64) -> Result<TensorId, LossError> {
    check_gamma(gamma)?;
    let a = g.scale(l1, T::of(gamma));
    let b = g.scale(l2, T::of(1.0 - gamma));
    Ok(g.add(a, b)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn half_mask() -> Vec<f64> {
        (0..16).map(|i| if i < 8 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn dice_perfect_overlap_is_zero() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(&[1, 1, 4, 4], half_mask()).unwrap();
        let p = g.constant(&[1, 1, 4, 4], half_mask()).unwrap();
        let l = dice_loss(&mut g, p, t).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn dice_disjoint_masks() {
        let mask = half_mask();
        let inverse: Vec<f64> = mask.iter().map(|m| 1.0 - m).collect();
        let mut g = Graph::<f64>::new();
        let t = g.constant(&[1, 1, 4, 4], mask).unwrap();
        let p = g.constant(&[1, 1, 4, 4], inverse).unwrap();
        let l = dice_loss(&mut g, p, t).unwrap();
        assert!((g.item(l) - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
    }

    #[test]
    fn dice_rejects_soft_targets() {
        let mut g = Graph::<f64>::new();
        let t = g.constant(&[2], vec![0.0, 0.5]).unwrap();
        let p = g.constant(&[2], vec![0.2, 0.5]).unwrap();
        assert_eq!(dice_loss(&mut g, p, t), Err(LossError::NonBinaryTarget(0.5)));
    }

    #[test]
    fn dice_decreases_toward_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let target = half_mask();
        let start: Vec<f64> = (0..16).map(|_| rng.random_range(0.01..0.99)).collect();
        let mut last = f64::INFINITY;
        for step in 0..5 {
            let t = step as f64 / 4.0;
            let p: Vec<f64> = start.iter().zip(&target).map(|(s, g)| s + t * (g - s)).collect();
            let mut g = Graph::<f64>::new();
            let pt = g.constant(&[16], p).unwrap();
            let tt = g.constant(&[16], target.clone()).unwrap();
            let l = dice_loss(&mut g, pt, tt).unwrap();
            assert!(g.item(l) < last);
            last = g.item(l);
        }
    }

    #[test]
    fn attention_loss_with_full_foreground_is_plain_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let yf: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let yb: Vec<f64> = (0..9).map(|_| rng.random()).collect();
        let mut g = Graph::<f64>::new();
        let xi = g.constant(&[1, 1, 3, 3], x.clone()).unwrap();
        let fi = g.constant(&[1, 1, 3, 3], yf.clone()).unwrap();
        let bi = g.constant(&[1, 1, 3, 3], yb).unwrap();
        let pred = g.constant(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let masks = AttentionMasks::from_prediction(&mut g, pred);
        let (l, terms) = attention_recon_loss(&mut g, xi, bi, fi, masks).unwrap();
        let mse = x.iter().zip(&yf).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / 9.0;
        assert_eq!((terms.fg_weight, terms.bg_weight), (1.0, 0.0));
        assert!((g.item(l) - mse).abs() < 1e-15);
    }

    #[test]
    fn attention_loss_vanishes_when_targets_match() {
        let c = 0.6;
        let mut g = Graph::<f64>::new();
        let xi = g.constant(&[1, 1, 2, 2], vec![c; 4]).unwrap();
        let yi = g.constant(&[1, 1, 2, 2], vec![c / 2.0; 4]).unwrap();
        let pred = g.constant(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let masks = AttentionMasks::from_prediction(&mut g, pred);
        let (l, _) = attention_recon_loss(&mut g, xi, yi, yi, masks).unwrap();
        assert_eq!(g.item(l), 0.0);
    }

    #[test]
    fn plain_loss_constant_residual() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let y = g.constant(&[1, 1, 2, 2], vec![0.5; 4]).unwrap();
        let l = plain_recon_loss(&mut g, x, y).unwrap();
        assert_eq!(g.item(l), 0.25);
        let l0 = plain_recon_loss(&mut g, x, x).unwrap();
        assert_eq!(g.item(l0), 0.0);
        let z = g.constant(&[1, 1, 1, 4], vec![0.0; 4]).unwrap();
        assert!(plain_recon_loss(&mut g, x, z).is_err());
    }

    #[test]
    fn joint_loss_endpoints_and_substitution() {
        let mut g = Graph::<f64>::new();
        let l1 = g.scalar(0.4);
        let l2 = g.scalar(0.2);
        let at = |g: &mut Graph<f64>, gamma| {
            let j = joint_loss(g, l1, l2, gamma).unwrap();
            g.item(j)
        };
        assert_eq!(at(&mut g, 1.0), 0.4);
        assert_eq!(at(&mut g, 0.0), 0.2);
        assert!((at(&mut g, 0.7) - 0.34).abs() < 1e-15);
        let mid = at(&mut g, 0.5);
        assert!((mid - 0.5 * (0.4 + 0.2)).abs() < 1e-15);
        assert_eq!(joint_loss(&mut g, l1, l2, 1.5), Err(LossError::Gamma(1.5)));
        assert_eq!(joint_loss(&mut g, l1, l2, -0.1), Err(LossError::Gamma(-0.1)));
    }
}
