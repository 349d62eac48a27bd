//! Independent reference computations used to check the pipeline.
//!
//! Nothing here calls into the clustering or coding code it is meant to
//! verify.

use crate::tensor::ComplexScalar;
use crate::{Error, Result};

pub const MAX_ORACLE_POINTS: usize = 8;
pub const MAX_ORACLE_CLUSTERS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub optimal_wcss: f64,
    /// Cluster label per point for the first optimal labelling found.
    pub optimal_partition: Vec<u32>,
}

/// WCSS of a labelling with each cluster represented by its exact mean.
pub fn partition_wcss(points: &[ComplexScalar], labels: &[u32], m: usize) -> f64 {
    let mut sum = vec![(0.0f64, 0.0f64, 0usize); m];
    for (p, &l) in points.iter().zip(labels) {
        let s = &mut sum[l as usize];
        s.0 += p.re as f64;
        s.1 += p.im as f64;
        s.2 += 1;
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            let (sr, si, n) = sum[l as usize];
            let (mr, mi) = (sr / n as f64, si / n as f64);
            (p.re as f64 - mr).powi(2) + (p.im as f64 - mi).powi(2)
        })
        .sum()
}

/// Exact k-means optimum by enumerating all `m^n` labellings.
pub fn brute_force_kmeans(points: &[ComplexScalar], m: usize) -> Result<OracleResult> {
    if points.is_empty() || m == 0 {
        return Err(Error::EmptyInput);
    }
    if points.len() > MAX_ORACLE_POINTS || m > MAX_ORACLE_CLUSTERS {
        return Err(Error::SizeExceeded(format!(
            "{} points / {m} clusters (limits {MAX_ORACLE_POINTS} / {MAX_ORACLE_CLUSTERS})",
            points.len()
        )));
    }
    let n = points.len();
    let total = m.pow(n as u32);
    let mut labels = vec![0u32; n];
    let mut best = OracleResult {
        optimal_wcss: f64::INFINITY,
        optimal_partition: labels.clone(),
    };
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = (c % m) as u32;
            c /= m;
        }
        let w = partition_wcss(points, &labels, m);
        if w < best.optimal_wcss {
            best.optimal_wcss = w;
            best.optimal_partition.copy_from_slice(&labels);
        }
    }
    Ok(best)
}

/// Empirical entropy in bits per symbol of a list of occurrence counts.
pub fn entropy(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

/// Probability that a Rayleigh(sigma) variable is below `t`.
pub fn rayleigh_cdf(t: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    -(-t * t / (2.0 * sigma * sigma)).exp_m1()
}
