//! Top-down localization: per-cluster search over cuboids, candidate
//! selection and the external root cause decision.

mod score;
mod search;

pub use score::{descended_ratio, gps, interpretability, tradeoff_weight, MEMBER_CUT, OTHER_CLUSTER_CUT};
pub use search::{localize_cluster, search_cuboid};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::cluster::{
    density_cluster, filter_abnormal, knee_threshold, leaf_distribution, overall_distribution, residuals,
    ClusterConfig, DeviationDistribution, Grid, KneeThreshold,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::schema::{AttributeCombination, Cuboid, DistributionFamily};
use crate::snapshot::Snapshot;

/// Version tag written into every serialized report.
pub const REPORT_VERSION: u32 = 1;

/// Fallback external root cause threshold.
pub const DEFAULT_DELTA_EXRC: f64 = 0.8;

/// Minimum number of historical values for threshold selection.
pub const MIN_EXRC_HISTORY: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    /// GPS at which deeper cuboid layers are skipped. Values above 1
    /// disable early stopping.
    pub delta: f64,
    pub delta_exrc: f64,
    pub max_layer: Option<usize>,
    pub cluster: ClusterConfig,
    /// Skip clusters near zero whose center would not move a median leaf
    /// past the residual threshold, unless every cluster is like that.
    pub drop_noise_clusters: bool,
    pub execution: Execution,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            delta: 0.9,
            delta_exrc: DEFAULT_DELTA_EXRC,
            max_layer: None,
            cluster: ClusterConfig::default(),
            drop_noise_clusters: true,
            execution: Execution::default(),
        }
    }
}

impl LocalizeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::InvalidArgument("delta must be positive".into()));
        }
        if !(self.delta_exrc > 0.0 && self.delta_exrc <= 1.0) {
            return Err(Error::InvalidArgument("delta_exrc must lie in (0, 1]".into()));
        }
        if self.max_layer == Some(0) {
            return Err(Error::InvalidArgument("max_layer must be at least 1".into()));
        }
        if self.cluster.smoothing_width == 0 {
            return Err(Error::InvalidArgument("smoothing width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Combinations from a single cuboid explaining one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct RootCauseCandidate {
    pub combinations: Vec<AttributeCombination>,
    pub gps: f64,
    pub cuboid: Cuboid,
}

impl RootCauseCandidate {
    pub(crate) fn describe(&self) -> String {
        self.combinations.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub center: f64,
    pub bounds: (f64, f64),
    /// Total membership mass.
    pub mass: f64,
    /// GPS of the selected candidate, 0 when the cluster is unexplained.
    pub gps: f64,
    pub root_cause: Vec<AttributeCombination>,
    pub cuboid: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub version: u32,
    /// Union of the per-cluster root causes.
    pub root_causes: Vec<AttributeCombination>,
    pub per_cluster: Vec<ClusterReport>,
    pub min_gps: Option<f64>,
    pub external_root_cause: bool,
    pub no_anomaly: bool,
    pub threshold: KneeThreshold,
    pub abnormal_leaves: usize,
    /// Clusters skipped as noise.
    pub dropped_clusters: usize,
    pub elapsed_s: f64,
    #[serde(skip)]
    pub overall: Option<DeviationDistribution>,
}

impl LocalizationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// `true` when the weakest cluster explanation falls below `delta_exrc`.
pub fn determine_external(min_gps: Option<f64>, delta_exrc: f64) -> bool {
    min_gps.map_or(false, |m| m < delta_exrc)
}

/// Full pipeline: knee filtering, deviation score clustering and
/// per-cluster search.
pub fn localize(snapshot: &Snapshot, cfg: &LocalizeConfig) -> Result<LocalizationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let threshold = knee_threshold(&residuals(snapshot));
    let abnormal = filter_abnormal(snapshot, threshold.value);
    let mut report = LocalizationReport {
        version: REPORT_VERSION,
        root_causes: Vec::new(),
        per_cluster: Vec::new(),
        min_gps: None,
        external_root_cause: false,
        no_anomaly: abnormal.is_empty(),
        threshold,
        abnormal_leaves: abnormal.len(),
        dropped_clusters: 0,
        elapsed_s: 0.0,
        overall: None,
    };
    if abnormal.is_empty() {
        report.elapsed_s = start.elapsed().as_secs_f64();
        return Ok(report);
    }
    let family = if snapshot.measure().is_derived() {
        DistributionFamily::None
    } else {
        snapshot.measure().family
    };
    let (v, f) = (snapshot.leaf_real(), snapshot.leaf_forecast());
    let dists = cfg
        .execution
        .map(&abnormal, |&l| leaf_distribution(v[l], f[l], family, Grid::DEVIATION))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let overall = overall_distribution(&dists)?;
    let mut clusters = density_cluster(&overall, &abnormal, &dists, &cfg.cluster)?;
    drop(dists);
    if cfg.drop_noise_clusters {
        let typical = median(f);
        let scale = NOISE_SPREAD * noise_scale(v, f);
        let keep: Vec<bool> = clusters
            .iter()
            .map(|c| c.center.abs() > scale || !is_noise_center(c.center, typical, threshold.value))
            .collect();
        // a fault spread thinly over every leaf still needs explaining
        if keep.contains(&true) {
            let mut it = keep.iter();
            clusters.retain(|_| *it.next().unwrap());
            report.dropped_clusters = keep.iter().filter(|k| !**k).count();
        }
    }

    let cache = search::CuboidCache::new(snapshot);
    let found = cfg.execution.map_range(0..clusters.len(), |i| search::localize_in_cluster(&cache, &clusters, i, cfg));
    for (cluster, cand) in clusters.iter().zip(found) {
        let cand = match cand {
            Ok(c) => Some(c),
            Err(Error::EmptyCandidate) => None,
            Err(e) => return Err(e),
        };
        let gps = cand.as_ref().map_or(0.0, |c| c.gps);
        report.min_gps = Some(report.min_gps.map_or(gps, |m: f64| m.min(gps)));
        if let Some(c) = &cand {
            for e in &c.combinations {
                if !report.root_causes.contains(e) {
                    report.root_causes.push(e.clone());
                }
            }
        }
        report.per_cluster.push(ClusterReport {
            center: cluster.center,
            bounds: cluster.bounds,
            mass: cluster.total_mass(),
            gps,
            root_cause: cand.as_ref().map(|c| c.combinations.clone()).unwrap_or_default(),
            cuboid: cand.map(|c| c.cuboid.names().to_vec()),
        });
    }
    report.external_root_cause = determine_external(report.min_gps, cfg.delta_exrc);
    report.overall = Some(overall);
    report.elapsed_s = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Multiple of the median leaf deviation within which a cluster center may
/// be noise.
pub const NOISE_SPREAD: f64 = 3.0;

/// Median absolute deviation score over the leaves.
pub fn noise_scale(real: &[f64], forecast: &[f64]) -> f64 {
    let d: Vec<f64> = real
        .iter()
        .zip(forecast)
        .filter(|(v, f)| **v + **f > 0.0)
        .map(|(v, f)| ((f - v) / (f + v)).abs())
        .collect();
    median(&d)
}

/// A cluster centered at deviation score `center` is noise when the ripple
/// it implies changes a leaf with forecast `typical` by at most `threshold`.
pub fn is_noise_center(center: f64, typical: f64, threshold: f64) -> bool {
    if center <= -1.0 {
        return false;
    }
    (typical * 2.0 * center / (1.0 + center)).abs() <= threshold
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pick the external root cause threshold from historical minimum GPS
/// values: the lower bound of the cluster with the largest center.
pub fn select_exrc_threshold(historical_min_gps: &[f64]) -> f64 {
    let values: Vec<f64> = historical_min_gps.iter().copied().filter(|x| x.is_finite()).collect();
    if values.len() < MIN_EXRC_HISTORY {
        return DEFAULT_DELTA_EXRC;
    }
    let grid = Grid::UNIT;
    let dists: Vec<DeviationDistribution> =
        values.iter().map(|&x| DeviationDistribution::dirac(grid, x.clamp(0.0, 1.0))).collect();
    let Ok(overall) = overall_distribution(&dists) else {
        return DEFAULT_DELTA_EXRC;
    };
    let members: Vec<usize> = (0..values.len()).collect();
    let cfg = ClusterConfig::default();
    match density_cluster(&overall, &members, &dists, &cfg) {
        Ok(clusters) => clusters
            .iter()
            .max_by(|a, b| a.center.partial_cmp(&b.center).unwrap())
            .map_or(DEFAULT_DELTA_EXRC, |c| c.bounds.0),
        Err(_) => DEFAULT_DELTA_EXRC,
    }
}
