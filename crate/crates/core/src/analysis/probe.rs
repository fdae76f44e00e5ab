//! Linear probe: how well a per-voxel linear model on encoder features
//! predicts the average-pooled ground truth at each encoder level.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::AnalysisError;

const RIDGE: f64 = 1e-8;

/// Activations of one encoder level for a batch, laid out `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeMode {
    /// Fit and score on the same voxels.
    InSample,
    /// Fit on a seeded half of the voxels, score on the other half.
    HeldOut,
}

impl ProbeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InSample => "in_sample",
            Self::HeldOut => "held_out",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeOptions {
    /// Voxels per level above which a seeded subsample is used.
    pub max_voxels: usize,
    pub seed: u64,
    pub mode: ProbeMode,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        Self {
            max_voxels: 20_000,
            seed: 0,
            mode: ProbeMode::InSample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelProbe {
    /// `None` when the pooled labels are constant and R² is undefined.
    pub r2: Option<f64>,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub levels: Vec<LevelProbe>,
    pub mode: ProbeMode,
}

impl ProbeResult {
    /// CSV with header `level,samples,r2,mode`; undefined levels leave `r2` empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,samples,r2,mode\n");
        for (level, p) in self.levels.iter().enumerate() {
            let r2 = p.r2.map(|v| format!("{v:.9}")).unwrap_or_default();
            out.push_str(&format!("{level},{},{r2},{}\n", p.samples, self.mode.as_str()));
        }
        out
    }
}

/// Mean and sample variance of R² across repeated probes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSummary {
    pub repetitions: usize,
    pub mean: Vec<Option<f64>>,
    pub variance: Vec<Option<f64>>,
    pub mode: ProbeMode,
}

impl ProbeSummary {
    /// Undefined repetitions are skipped per level.
    pub fn from_runs(runs: &[ProbeResult]) -> Result<Self, AnalysisError> {
        let first = runs.first().ok_or(AnalysisError::TooFew { needed: 1, got: 0 })?;
        let levels = first.levels.len();
        if let Some(bad) = runs.iter().find(|r| r.levels.len() != levels) {
            return Err(AnalysisError::Length(levels, bad.levels.len()));
        }
        let (mut mean, mut variance) = (Vec::new(), Vec::new());
        for level in 0..levels {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.levels[level].r2).collect();
            if vals.is_empty() {
                mean.push(None);
                variance.push(None);
                continue;
            }
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let v = if vals.len() > 1 {
                vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            mean.push(Some(m));
            variance.push(Some(v));
        }
        Ok(Self {
            repetitions: runs.len(),
            mean,
            variance,
            mode: first.mode,
        })
    }

    /// CSV with header `level,repetitions,mean_r2,var_r2,mode`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,repetitions,mean_r2,var_r2,mode\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.9}")).unwrap_or_default();
        for level in 0..self.mean.len() {
            out.push_str(&format!(
                "{level},{},{},{},{}\n",
                self.repetitions,
                fmt(self.mean[level]),
                fmt(self.variance[level]),
                self.mode.as_str()
            ));
        }
        out
    }
}

/// Average-pools a binary `height × width` mask by `factor` in each direction.
pub fn pool_labels(mask: &[u8], height: usize, width: usize, factor: usize) -> Result<Vec<f64>, AnalysisError> {
    if mask.len() != height * width {
        return Err(AnalysisError::Length(mask.len(), height * width));
    }
    if factor == 0 || !height.is_multiple_of(factor) || !width.is_multiple_of(factor) {
        return Err(AnalysisError::Invalid(format!(
            "pool factor {factor} does not divide {height}x{width}"
        )));
    }
    let (ph, pw) = (height / factor, width / factor);
    let area = (factor * factor) as f64;
    let mut out = vec![0.0; ph * pw];
    for y in 0..height {
        for x in 0..width {
            out[(y / factor) * pw + x / factor] += mask[y * width + x] as f64;
        }
    }
    for v in &mut out {
        *v /= area;
    }
    Ok(out)
}

/// Design matrix rows are `x[i*p .. (i+1)*p]`. Returns R² of the intercept
/// model fitted on `fit` rows and scored on `score` rows, or `None` when the
/// scored labels are constant.
fn fit_and_score(x: &[f64], y: &[f64], p: usize, fit: &[usize], score: &[usize]) -> Option<f64> {
    let mean =
        |rows: &[usize], col: &dyn Fn(usize) -> f64| rows.iter().map(|&r| col(r)).sum::<f64>() / rows.len() as f64;
    let x_mean: Vec<f64> = (0..p).map(|j| mean(fit, &|r| x[r * p + j])).collect();
    let y_mean = mean(fit, &|r| y[r]);

    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for &r in fit {
        for j in 0..p {
            row[j] = x[r * p + j] - x_mean[j];
        }
        let yc = y[r] - y_mean;
        for a in 0..p {
            rhs[a] += row[a] * yc;
            for b in 0..=a {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(b, a)] = gram[(a, b)];
        }
        gram[(a, a)] += RIDGE;
    }
    let beta = match gram.clone().cholesky() {
        Some(c) => c.solve(&rhs),
        None => gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(p)),
    };

    let score_mean = mean(score, &|r| y[r]);
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for &r in score {
        let pred = y_mean + (0..p).map(|j| beta[j] * (x[r * p + j] - x_mean[j])).sum::<f64>();
        ss_res += (y[r] - pred).powi(2);
        ss_tot += (y[r] - score_mean).powi(2);
    }
    (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot)
}

/// In-sample R² of an ordinary-least-squares fit with intercept.
///
/// `x` holds `y.len()` rows of `p` features each.
pub fn ols_r2(x: &[f64], y: &[f64], p: usize) -> Result<Option<f64>, AnalysisError> {
    if x.len() != y.len() * p {
        return Err(AnalysisError::Length(x.len(), y.len() * p));
    }
    if y.is_empty() {
        return Err(AnalysisError::TooFew { needed: 1, got: 0 });
    }
    let rows: Vec<usize> = (0..y.len()).collect();
    Ok(fit_and_score(x, y, p, &rows, &rows))
}

/// Probes every encoder level against full-resolution binary masks, one per
/// image in the batch.
pub fn probe_r2(
    features: &[FeatureMap],
    masks: &[Vec<u8>],
    height: usize,
    width: usize,
    opts: &ProbeOptions,
) -> Result<ProbeResult, AnalysisError> {
    let mut levels = Vec::with_capacity(features.len());
    for (level, fm) in features.iter().enumerate() {
        if fm.batch != masks.len() {
            return Err(AnalysisError::Length(fm.batch, masks.len()));
        }
        let plane = fm.height * fm.width;
        if fm.values.len() != fm.batch * fm.channels * plane {
            return Err(AnalysisError::Length(fm.values.len(), fm.batch * fm.channels * plane));
        }
        if fm.height == 0 || !height.is_multiple_of(fm.height) || height / fm.height != width / fm.width.max(1) {
            return Err(AnalysisError::Invalid(format!(
                "level {level} extent {}x{} is not a uniform downsampling of {height}x{width}",
                fm.height, fm.width
            )));
        }
        let factor = height / fm.height;

        let c = fm.channels;
        let mut x = Vec::with_capacity(fm.batch * plane * c);
        let mut y = Vec::with_capacity(fm.batch * plane);
        for (n, mask) in masks.iter().enumerate() {
            y.extend(pool_labels(mask, height, width, factor)?);
            let base = n * c * plane;
            for v in 0..plane {
                x.extend((0..c).map(|ch| fm.values[base + ch * plane + v]));
            }
        }

        let total = y.len();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(level as u64);
        let rows: Vec<usize> = if total > opts.max_voxels {
            let mut r = sample(&mut rng, total, opts.max_voxels).into_vec();
            r.sort_unstable();
            r
        } else {
            (0..total).collect()
        };
        let r2 = match opts.mode {
            ProbeMode::InSample => fit_and_score(&x, &y, c, &rows, &rows),
            ProbeMode::HeldOut => {
                let order = sample(&mut rng, rows.len(), rows.len()).into_vec();
                let half = rows.len() / 2;
                let fit: Vec<usize> = order[..half].iter().map(|&i| rows[i]).collect();
                let score: Vec<usize> = order[half..].iter().map(|&i| rows[i]).collect();
                if fit.is_empty() || score.is_empty() {
                    None
                } else {
                    fit_and_score(&x, &y, c, &fit, &score)
                }
            }
        };
        levels.push(LevelProbe {
            r2,
            samples: rows.len(),
        });
    }
    Ok(ProbeResult {
        levels,
        mode: opts.mode,
    })
}
