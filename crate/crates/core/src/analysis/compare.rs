use super::{t_test_two_sided, AnalysisError};

/// Per-fold test Dice of one strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyRuns {
    pub strategy: String,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySummary {
    pub strategy: String,
    pub folds: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub summaries: Vec<StrategySummary>,
    /// Symmetric matrix of two-sided Welch p-values, indexed like `summaries`.
    pub p_values: Vec<Vec<f64>>,
}

impl ComparisonReport {
    pub fn p_value(&self, a: &str, b: &str) -> Option<f64> {
        let idx = |s: &str| self.summaries.iter().position(|x| x.strategy == s);
        Some(self.p_values[idx(a)?][idx(b)?])
    }

    /// CSV with header `strategy,folds,mean_dice,std_dice,p_<other>...`,
    /// one `p_` column per strategy in row order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,folds,mean_dice,std_dice");
        for s in &self.summaries {
            out.push_str(&format!(",p_{}", s.strategy));
        }
        out.push('\n');
        for (i, s) in self.summaries.iter().enumerate() {
            out.push_str(&format!("{},{},{:.6},{:.6}", s.strategy, s.folds, s.mean, s.std));
            for p in &self.p_values[i] {
                out.push_str(&format!(",{p:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Summarizes per-fold scores and tests every pair of strategies.
pub fn compare_strategies(runs: &[StrategyRuns]) -> Result<ComparisonReport, AnalysisError> {
    let folds = runs.first().map_or(0, |r| r.scores.len());
    if folds < 2 {
        return Err(AnalysisError::TooFew { needed: 2, got: folds });
    }
    for r in runs {
        if r.scores.len() != folds {
            return Err(AnalysisError::Invalid(format!(
                "strategy `{}` has {} folds, expected {folds}",
                r.strategy,
                r.scores.len()
            )));
        }
    }
    let summaries = runs
        .iter()
        .map(|r| {
            let n = folds as f64;
            let mean = r.scores.iter().sum::<f64>() / n;
            let var = r.scores.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            StrategySummary {
                strategy: r.strategy.clone(),
                folds,
                mean,
                std: var.sqrt(),
            }
        })
        .collect();
    let mut p_values = vec![vec![1.0; runs.len()]; runs.len()];
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            let p = t_test_two_sided(&runs[i].scores, &runs[j].scores)?.p;
            p_values[i][j] = p;
            p_values[j][i] = p;
        }
    }
    Ok(ComparisonReport { summaries, p_values })
}
