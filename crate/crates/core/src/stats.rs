//! Percentiles and percentile-bootstrap confidence intervals.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("quantile {0} outside [0, 1]")]
    BadQuantile(f64),
}

/// Linear-interpolation quantile on sorted data: position q·(n−1) between
/// order statistics (Hyndman–Fan type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64, StatsError> {
    if !(0.0..=1.0).contains(&q) {
        return Err(StatsError::BadQuantile(q));
    }
    if sorted.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], q: f64) -> Result<f64, StatsError> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub low: f64,
    pub high: f64,
}

/// Percentile bootstrap of the mean over per-run values.
pub fn bootstrap_ci(
    values: &[f64],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<ConfidenceInterval, StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: values.len(),
        });
    }
    if !(0.0..1.0).contains(&level) || resamples == 0 {
        return Err(StatsError::BadQuantile(level));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n = values.len();
    // Summing deviations from a pivot keeps constant samples exact.
    let pivot = values[0];
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let dev: f64 = (0..n).map(|_| values[rng.gen_range(0..n)] - pivot).sum();
            pivot + dev / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok(ConfidenceInterval {
        low: quantile_sorted(&means, alpha)?,
        high: quantile_sorted(&means, 1.0 - alpha)?,
    })
}
