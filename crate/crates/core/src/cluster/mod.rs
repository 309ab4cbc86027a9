//! Bottom-up stage: residual filtering, deviation-score distributions and
//! one-dimensional density clustering.
//!
//! Leaves whose forecast residual passes the knee threshold are treated as
//! abnormal. Each abnormal leaf contributes a distribution over deviation
//! scores; the average of those is smoothed and cut at its relative minima.
//! Every relative maximum becomes a cluster, and a leaf belongs to a cluster
//! with the probability mass its own distribution puts between the bounds.

mod distribution;
mod knee;

pub use distribution::{
    leaf_distribution, overall_distribution, poisson_pmf, poisson_support, DeviationDistribution, Grid,
    PMF_CUTOFF,
};
pub use knee::{knee_threshold, KneeThreshold};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::snapshot::Snapshot;

/// Tunables for the density clustering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Width (in bins) of the centered moving average applied before extrema detection.
    pub smoothing_width: usize,
    /// Clusters holding less membership mass than this many leaves are dropped.
    pub min_cluster_mass: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { smoothing_width: 5, min_cluster_mass: 1.0 }
    }
}

/// A deviation-score interval and the probability that each leaf falls inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub center: f64,
    pub bounds: (f64, f64),
    /// Half-open bin range `[lo, hi)` owned by the cluster.
    pub bins: (usize, usize),
    /// `(leaf, probability)` for every leaf with positive probability, sorted by leaf.
    pub membership: Vec<(usize, f64)>,
}

impl Cluster {
    pub fn probability(&self, leaf: usize) -> f64 {
        self.membership
            .binary_search_by_key(&leaf, |m| m.0)
            .map_or(0.0, |i| self.membership[i].1)
    }

    /// Expected number of leaves in the cluster.
    pub fn total_mass(&self) -> f64 {
        self.membership.iter().map(|m| m.1).sum()
    }

    /// Dense per-leaf probability vector.
    pub fn dense_membership(&self, n_leaves: usize) -> Vec<f64> {
        let mut p = vec![0.0; n_leaves];
        for &(l, m) in &self.membership {
            p[l] = m;
        }
        p
    }
}

/// Leaves whose absolute residual `|v - f|` exceeds `threshold`.
pub fn filter_abnormal(snapshot: &Snapshot, threshold: f64) -> Vec<usize> {
    snapshot
        .leaf_real()
        .iter()
        .zip(snapshot.leaf_forecast())
        .enumerate()
        .filter(|(_, (v, f))| (*v - *f).abs() > threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Absolute forecast residual of every leaf.
pub fn residuals(snapshot: &Snapshot) -> Vec<f64> {
    snapshot
        .leaf_real()
        .iter()
        .zip(snapshot.leaf_forecast())
        .map(|(v, f)| (v - f).abs())
        .collect()
}

/// Centered moving average; bins outside the grid count as zero.
pub fn smooth(mass: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 {
        return mass.to_vec();
    }
    let half = (width / 2) as isize;
    let n = mass.len() as isize;
    (0..n)
        .map(|i| {
            let mut s = 0.0;
            for j in (i - half)..=(i + half) {
                if (0..n).contains(&j) {
                    s += mass[j as usize];
                }
            }
            s / (2 * half + 1) as f64
        })
        .collect()
}

/// Strict relative maxima and minima of a sequence padded with zeros at both
/// ends. A run of equal values counts as one extremum located at its midpoint.
pub fn relative_extrema(values: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut maxima = Vec::new();
    let mut minima = Vec::new();
    let n = values.len();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let left = if i == 0 { 0.0 } else { values[i - 1] };
        let right = if j + 1 == n { 0.0 } else { values[j + 1] };
        let here = values[i];
        let mid = (i + j) / 2;
        if here > left && here > right {
            maxima.push(mid);
        } else if here < left && here < right && i > 0 && j + 1 < n {
            minima.push(mid);
        }
        i = j + 1;
    }
    (maxima, minima)
}

/// Split the (smoothed) overall density into clusters and compute each
/// abnormal leaf's membership.
///
/// `leaf_dists[i]` belongs to leaf `abnormal[i]`.
pub fn density_cluster(
    dist: &DeviationDistribution,
    abnormal: &[usize],
    leaf_dists: &[DeviationDistribution],
    cfg: &ClusterConfig,
) -> Result<Vec<Cluster>> {
    if abnormal.len() != leaf_dists.len() {
        return Err(Error::InvalidArgument("one distribution per abnormal leaf is required".into()));
    }
    let grid = dist.grid();
    if leaf_dists.iter().any(|d| d.grid() != grid) {
        return Err(Error::InvalidArgument("grid mismatch".into()));
    }
    let smoothed = smooth(dist.mass(), cfg.smoothing_width);
    let (maxima, minima) = relative_extrema(&smoothed);
    let last = grid.bins - 1;
    let spans: Vec<(usize, usize, usize)> = if maxima.is_empty() {
        vec![(0, grid.bins / 2, last)]
    } else {
        maxima
            .iter()
            .map(|&c| {
                let l = minima.iter().rev().find(|&&m| m < c).copied().unwrap_or(0);
                let r = minima.iter().find(|&&m| m > c).copied().unwrap_or(last);
                (l, c, r)
            })
            .collect()
    };
    let mut clusters = Vec::with_capacity(spans.len());
    for (l, c, r) in spans {
        // a bin belongs to exactly one span: [l, r), the final bin goes to the last span
        let hi = if r == last { grid.bins } else { r };
        let mut membership: Vec<(usize, f64)> = abnormal
            .iter()
            .zip(leaf_dists)
            .filter_map(|(&leaf, d)| {
                let p = d.mass_in(l, hi).min(1.0);
                (p > 0.0).then_some((leaf, p))
            })
            .collect();
        membership.sort_by_key(|m| m.0);
        let cluster = Cluster {
            center: grid.center(c),
            bounds: (grid.center(l), grid.center(r)),
            bins: (l, hi),
            membership,
        };
        // leaf distributions are normalized only up to rounding
        if cluster.total_mass() >= cfg.min_cluster_mass - 1e-6 {
            clusters.push(cluster);
        }
    }
    Ok(clusters)
}
