//! Candidate scoring: descended ratio, generalized potential score,
//! interpretability and the expressiveness/interpretability trade-off weight.

use fixedbitset::FixedBitSet;

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::schema::AttributeCombination;
use crate::snapshot::Snapshot;

/// Leaves assigned to another cluster with at least this probability are left
/// out of the complement when scoring a candidate.
pub const OTHER_CLUSTER_CUT: f64 = 0.5;

/// Leaves held by a cluster with less than this probability count as
/// outside it for the descended ratio.
pub const MEMBER_CUT: f64 = 0.5;

/// Probability-weighted share of `combo`'s leaves that belong to `cluster`.
///
/// Members contribute their membership probability to numerator and
/// denominator; every other descended leaf adds 1 to the denominator. A
/// leaf is a member when its probability reaches [`MEMBER_CUT`].
pub fn descended_ratio(combo: &AttributeCombination, cluster: &Cluster, snapshot: &Snapshot) -> Result<f64> {
    let leaves = snapshot.leaf_set(combo)?;
    let (mut num, mut others) = (0.0, 0usize);
    for l in leaves.ones() {
        let p = cluster.probability(l);
        if p >= MEMBER_CUT {
            num += p;
        } else {
            others += 1;
        }
    }
    Ok(ratio(num, others))
}

pub(crate) fn ratio(member_mass: f64, non_members: usize) -> f64 {
    if member_mass <= 0.0 {
        0.0
    } else {
        member_mass / (member_mass + non_members as f64)
    }
}

/// `sum(|e|^2)` over the members of a candidate.
pub fn interpretability(set: &[AttributeCombination]) -> usize {
    set.iter().map(|e| e.len() * e.len()).sum()
}

/// Weight of GPS against interpretability when ranking candidates from
/// different cuboids. `coverage` is clamped into `(0, 1)` so the weight
/// stays positive.
pub fn tradeoff_weight(num_cluster: usize, num_attr: usize, coverage: f64) -> f64 {
    let nc = num_cluster.max(1) as f64;
    let na = num_attr.max(1) as f64;
    let coverage = coverage.clamp(1e-300, 1.0 - 1e-9);
    ((nc + 1.0).ln() / nc) * (na / (na + 1.0).ln()) * -coverage.ln()
}

/// Per-cluster state shared by every GPS evaluation.
pub(crate) struct ClusterContext<'a> {
    pub snap: &'a Snapshot,
    /// Leaves that may count towards the complement.
    allowed: Vec<bool>,
    allowed_resid: f64,
    allowed_count: usize,
    pub mass: f64,
}

impl<'a> ClusterContext<'a> {
    pub fn new(snap: &'a Snapshot, cluster: &Cluster, others: &[&Cluster]) -> Self {
        let n = snap.len();
        let mut allowed = vec![true; n];
        for o in others {
            for &(l, q) in &o.membership {
                if q > OTHER_CLUSTER_CUT {
                    allowed[l] = false;
                }
            }
        }
        let (v, f) = (snap.leaf_real(), snap.leaf_forecast());
        let mut allowed_resid = 0.0;
        let mut allowed_count = 0;
        for i in 0..n {
            if allowed[i] {
                allowed_resid += (v[i] - f[i]).abs();
                allowed_count += 1;
            }
        }
        Self { snap, allowed, allowed_resid, allowed_count, mass: cluster.total_mass() }
    }

    pub fn scorer(&self) -> PrefixScorer<'_, 'a> {
        PrefixScorer {
            ctx: self,
            leaves: Vec::new(),
            v_sums: [0.0; 2],
            f_sums: [0.0; 2],
            resid_in: 0.0,
            allowed_resid_in: 0.0,
            allowed_count_in: 0,
        }
    }
}

/// Incrementally grown leaf set `LE(S)` with its GPS.
///
/// Groups added must be leaf-disjoint from what is already there.
pub(crate) struct PrefixScorer<'c, 'a> {
    ctx: &'c ClusterContext<'a>,
    leaves: Vec<u32>,
    v_sums: [f64; 2],
    f_sums: [f64; 2],
    resid_in: f64,
    allowed_resid_in: f64,
    allowed_count_in: usize,
}

impl PrefixScorer<'_, '_> {
    pub fn add(&mut self, leaves: &[u32]) {
        let snap = self.ctx.snap;
        let (v, f) = (snap.leaf_real(), snap.leaf_forecast());
        let (sv, sf) = snap.operand_sums(leaves.iter().map(|&l| l as usize));
        for k in 0..2 {
            self.v_sums[k] += sv[k];
            self.f_sums[k] += sf[k];
        }
        for &l in leaves {
            let l = l as usize;
            let r = (v[l] - f[l]).abs();
            self.resid_in += r;
            if self.ctx.allowed[l] {
                self.allowed_resid_in += r;
                self.allowed_count_in += 1;
            }
        }
        self.leaves.extend_from_slice(leaves);
    }

    /// GPS of the current set.
    pub fn gps(&self) -> f64 {
        if self.leaves.is_empty() {
            return 0.0;
        }
        let snap = self.ctx.snap;
        let (vs, fs) = match snap.compose(self.v_sums, self.f_sums) {
            Ok(x) => x,
            Err(_) => return 0.0,
        };
        if vs + fs <= 0.0 {
            return 0.0;
        }
        let d = (fs - vs) / (fs + vs);
        let (v, f) = (snap.leaf_real(), snap.leaf_forecast());
        let dist_va: f64 = if d > -1.0 {
            let scale = (1.0 - d) / (1.0 + d);
            self.leaves.iter().map(|&l| (v[l as usize] - f[l as usize] * scale).abs()).sum()
        } else {
            // zero forecast for the whole set: every leaf already follows the candidate
            0.0
        };
        let n_in = self.leaves.len() as f64;
        let d1_va = dist_va / n_in;
        let d1_vf = self.resid_in / n_in;
        let comp_count = self.ctx.allowed_count - self.allowed_count_in;
        let d1_c = if comp_count == 0 {
            0.0
        } else {
            ((self.ctx.allowed_resid - self.allowed_resid_in) / comp_count as f64).max(0.0)
        };
        let denom = d1_vf + d1_c;
        if denom <= 0.0 {
            return 0.0;
        }
        1.0 - (d1_va + d1_c) / denom
    }
}

/// Generalized potential score of the candidate `set` for `cluster`.
///
/// Leaves held by any of `other_clusters` with probability above one half
/// are excluded from the complement.
pub fn gps(
    set: &[AttributeCombination],
    cluster: &Cluster,
    other_clusters: &[Cluster],
    snapshot: &Snapshot,
) -> Result<f64> {
    let mut union = FixedBitSet::with_capacity(snapshot.len());
    for e in set {
        union.union_with(&snapshot.leaf_set(e)?);
    }
    if union.count_ones(..) == 0 {
        return Err(Error::InvalidArgument("candidate has no descended leaves".into()));
    }
    let others: Vec<&Cluster> = other_clusters.iter().collect();
    let ctx = ClusterContext::new(snapshot, cluster, &others);
    let mut scorer = ctx.scorer();
    let leaves: Vec<u32> = union.ones().map(|l| l as u32).collect();
    scorer.add(&leaves);
    Ok(scorer.gps())
}
