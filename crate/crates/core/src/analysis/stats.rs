use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

/// Welch two-sample t-test result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided Welch (unequal variance) t-test.
///
/// When both samples have zero variance the statistic is undefined; the result
/// is then `p = 1` for equal means and `p = 0` otherwise.
pub fn t_test_two_sided(a: &[f64], b: &[f64]) -> Result<TTest, AnalysisError> {
    for v in [a, b] {
        if v.len() < 2 {
            return Err(AnalysisError::TooFew {
                needed: 2,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(AnalysisError::Invalid("non-finite sample value".into()));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    if se2 == 0.0 {
        return Ok(if ma == mb {
            TTest {
                t: 0.0,
                df: f64::INFINITY,
                p: 1.0,
            }
        } else {
            TTest {
                t: (ma - mb).signum() * f64::INFINITY,
                df: f64::INFINITY,
                p: 0.0,
            }
        });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TTest { t, df, p })
}
