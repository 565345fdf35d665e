use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("need at least 2 values, got {0}")]
    TooFewSamples(usize),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("all paired differences are equal; the t statistic is undefined")]
    DegenerateVariance,
    #[error("confidence level must lie strictly between 0 and 1")]
    BadLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub halfwidth: f64,
    pub level: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub df: u64,
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn student(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("degrees of freedom are positive")
}

/// Two-sided critical value `t*` with `P(|T| <= t*) = level`.
fn critical_value(df: f64, level: f64) -> f64 {
    let dist = student(df);
    let target = 0.5 + level / 2.0;
    let mut t = dist.inverse_cdf(target);
    // Newton polish against the CDF; the library inverse is looser than the CDF itself.
    for _ in 0..8 {
        let err = dist.cdf(t) - target;
        let density = statrs::distribution::Continuous::pdf(&dist, t);
        if density <= 0.0 || err.abs() < 1e-16 {
            break;
        }
        t -= err / density;
    }
    t
}

/// Student-t confidence interval for the mean: `mean ± t*(n−1)·s/√n`.
pub fn confidence_interval(values: &[f64], level: f64) -> Result<Interval, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::BadLevel);
    }
    if values.len() < 2 {
        return Err(StatsError::TooFewSamples(values.len()));
    }
    let n = values.len();
    let (mean, sd) = mean_and_sd(values);
    let halfwidth = if sd == 0.0 {
        0.0
    } else {
        critical_value((n - 1) as f64, level) * sd / (n as f64).sqrt()
    };
    Ok(Interval {
        mean,
        halfwidth,
        level,
        n,
    })
}

/// Two-sided paired t-test on `xs - ys`.
pub fn paired_t_test(xs: &[f64], ys: &[f64]) -> Result<TTest, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples(xs.len()));
    }
    let diffs: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x - y).collect();
    let first = diffs[0];
    if diffs.iter().all(|d| *d == first) {
        return Err(StatsError::DegenerateVariance);
    }
    let n = diffs.len();
    let (mean, sd) = mean_and_sd(&diffs);
    let t = mean / (sd / (n as f64).sqrt());
    let df = (n - 1) as u64;
    let p = (2.0 * student(df as f64).cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}
