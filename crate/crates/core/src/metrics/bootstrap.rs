use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng;

/// Percentile bootstrap interval around a point estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCI {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub n_resamples: usize,
}

fn check_level(level: f64, n_resamples: usize) -> Result<()> {
    if !(level > 0.0 && level < 1.0) || n_resamples == 0 {
        return Err(Error::Config("bootstrap needs 0 < level < 1 and at least one resample".into()));
    }
    Ok(())
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Percentile bootstrap of the mean.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<BootstrapCI> {
    if values.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    check_level(level, n_resamples)?;
    let n = values.len();
    let mut r = rng(seed);
    let mut buf = vec![0.0; n];
    let mut stats: Vec<f64> = (0..n_resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[r.random_range(0..n)];
            }
            mean(&buf)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapCI {
        point: mean(values),
        lower: quantile_sorted(&stats, tail),
        upper: quantile_sorted(&stats, 1.0 - tail),
        level,
        n_resamples,
    })
}

/// Percentile bootstrap over clusters. `stat` receives the resampled cluster
/// indices (with repetition) and may decline with `None`; declined resamples
/// are dropped. Returns `None` when the point statistic is undefined or every
/// resample declined.
pub fn cluster_bootstrap(
    n_clusters: usize,
    stat: impl Fn(&[usize]) -> Option<f64>,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Option<BootstrapCI>> {
    check_level(level, n_resamples)?;
    if n_clusters == 0 {
        return Ok(None);
    }
    let all: Vec<usize> = (0..n_clusters).collect();
    let Some(point) = stat(&all) else {
        return Ok(None);
    };
    let mut r = rng(seed);
    let mut idx = vec![0; n_clusters];
    let mut stats = Vec::with_capacity(n_resamples);
    for _ in 0..n_resamples {
        for i in idx.iter_mut() {
            *i = r.random_range(0..n_clusters);
        }
        if let Some(s) = stat(&idx) {
            stats.push(s);
        }
    }
    if stats.is_empty() {
        return Ok(None);
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(Some(BootstrapCI {
        point,
        lower: quantile_sorted(&stats, tail),
        upper: quantile_sorted(&stats, 1.0 - tail),
        level,
        n_resamples,
    }))
}
