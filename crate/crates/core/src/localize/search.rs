//! Per-cuboid prefix search and per-cluster layer-wise selection.

use std::cmp::Ordering;
use std::sync::OnceLock;

use super::score::{interpretability, ratio, tradeoff_weight, ClusterContext, MEMBER_CUT};
use super::{LocalizeConfig, RootCauseCandidate};
use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::schema::{cuboids_by_layer, Cuboid};
use crate::snapshot::{CuboidGroups, Snapshot};

/// GPS differences below this are treated as ties.
const GPS_EPS: f64 = 1e-9;

/// Cuboid groupings of one snapshot, computed on first use.
pub(crate) struct CuboidCache<'a> {
    snap: &'a Snapshot,
    cuboids: Vec<Cuboid>,
    groups: Vec<OnceLock<CuboidGroups>>,
}

impl<'a> CuboidCache<'a> {
    pub fn new(snap: &'a Snapshot) -> Self {
        let cuboids = cuboids_by_layer(snap.schema());
        let groups = cuboids.iter().map(|_| OnceLock::new()).collect();
        Self { snap, cuboids, groups }
    }

    pub fn max_layer(&self) -> usize {
        self.snap.schema().len()
    }

    /// Indices of the cuboids in `layer`.
    pub fn layer(&self, layer: usize) -> Vec<usize> {
        (0..self.cuboids.len()).filter(|&i| self.cuboids[i].layer() == layer).collect()
    }

    pub fn get(&self, i: usize) -> &CuboidGroups {
        self.groups[i].get_or_init(|| self.snap.cuboid_groups(&self.cuboids[i]))
    }
}

/// Best prefix of one cuboid's combinations sorted by descended ratio.
pub(crate) fn search_groups(ctx: &ClusterContext<'_>, members: &[(usize, f64)], cg: &CuboidGroups) -> Option<RootCauseCandidate> {
    let n_groups = cg.groups.len();
    let mut mass = vec![0.0; n_groups];
    let mut member_mass = vec![0.0; n_groups];
    let mut count = vec![0usize; n_groups];
    for &(leaf, p) in members {
        let g = cg.leaf_group[leaf] as usize;
        mass[g] += p;
        if p >= MEMBER_CUT {
            member_mass[g] += p;
            count[g] += 1;
        }
    }
    let mut ranked: Vec<(usize, f64)> = (0..n_groups)
        .filter(|&g| member_mass[g] > 0.0)
        .map(|g| (g, ratio(member_mass[g], cg.groups[g].leaves.len() - count[g])))
        .collect();
    if ranked.is_empty() {
        return None;
    }
    // ratio desc, member mass desc, then group order (lexicographic)
    ranked.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(Ordering::Equal)
            .then(mass[b.0].partial_cmp(&mass[a.0]).unwrap_or(Ordering::Equal))
            .then(a.0.cmp(&b.0))
    });
    let mut scorer = ctx.scorer();
    let (mut best, mut best_len) = (f64::NEG_INFINITY, 0);
    for (i, &(g, _)) in ranked.iter().enumerate() {
        scorer.add(&cg.groups[g].leaves);
        let s = scorer.gps();
        // a longer prefix must win by more than rounding noise
        if s > best + GPS_EPS {
            best = s;
            best_len = i + 1;
        }
    }
    let combinations = ranked[..best_len]
        .iter()
        .map(|&(g, _)| ctx.snap.group_combination(cg, g))
        .collect();
    Some(RootCauseCandidate { combinations, gps: best, cuboid: cg.cuboid.clone() })
}

/// Candidate ranking key: higher score, then higher GPS, then lower
/// interpretability, then the lexicographically smaller description.
fn better(a: &(f64, RootCauseCandidate), b: &(f64, RootCauseCandidate)) -> bool {
    let ord = a
        .0
        .partial_cmp(&b.0)
        .unwrap_or(Ordering::Equal)
        .then(a.1.gps.partial_cmp(&b.1.gps).unwrap_or(Ordering::Equal))
        .then(interpretability(&b.1.combinations).cmp(&interpretability(&a.1.combinations)))
        .then_with(|| b.1.describe().cmp(&a.1.describe()));
    ord == Ordering::Greater
}

pub(crate) fn localize_in_cluster(
    cache: &CuboidCache<'_>,
    clusters: &[Cluster],
    index: usize,
    cfg: &LocalizeConfig,
) -> Result<RootCauseCandidate> {
    let snap = cache.snap;
    let cluster = &clusters[index];
    if cluster.membership.is_empty() {
        return Err(Error::InvalidArgument("cluster has no members".into()));
    }
    let others: Vec<&Cluster> = clusters.iter().enumerate().filter(|&(i, _)| i != index).map(|(_, c)| c).collect();
    let ctx = ClusterContext::new(snap, cluster, &others);
    let coverage = ctx.mass / snap.len() as f64;
    let weight = tradeoff_weight(clusters.len(), snap.schema().len(), coverage);
    let top = cfg.max_layer.unwrap_or(usize::MAX).min(cache.max_layer());
    let mut best: Option<(f64, RootCauseCandidate)> = None;
    for layer in 1..=top {
        let found = cfg.execution.map(&cache.layer(layer), |&c| search_groups(&ctx, &cluster.membership, cache.get(c)));
        let mut stop = false;
        for cand in found.into_iter().flatten() {
            stop |= cand.gps >= cfg.delta;
            let scored = (cand.gps * weight - interpretability(&cand.combinations) as f64, cand);
            if best.as_ref().map_or(true, |b| better(&scored, b)) {
                best = Some(scored);
            }
        }
        if stop {
            break;
        }
    }
    best.map(|b| b.1).ok_or(Error::EmptyCandidate)
}

/// Best candidate of a single cuboid for `cluster`.
pub fn search_cuboid(cuboid: &Cuboid, cluster: &Cluster, other_clusters: &[Cluster], snapshot: &Snapshot) -> Result<RootCauseCandidate> {
    let others: Vec<&Cluster> = other_clusters.iter().collect();
    let ctx = ClusterContext::new(snapshot, cluster, &others);
    let cg = snapshot.cuboid_groups(cuboid);
    search_groups(&ctx, &cluster.membership, &cg).ok_or(Error::EmptyCandidate)
}

/// Layer-wise search for the root cause of `clusters[index]`. The other
/// clusters shape the GPS complement and the trade-off weight.
pub fn localize_cluster(clusters: &[Cluster], index: usize, snapshot: &Snapshot, cfg: &LocalizeConfig) -> Result<RootCauseCandidate> {
    if index >= clusters.len() {
        return Err(Error::InvalidArgument(format!("cluster index {index} out of range")));
    }
    let cache = CuboidCache::new(snapshot);
    localize_in_cluster(&cache, clusters, index, cfg)
}
