//! Medoid-anchored clustering with controlled replication.
//!
//! Entries are ranked by co-activation density (neighbours within the radius
//! `tau`). The densest uncovered entry becomes a medoid; candidates within
//! `tau` of it are visited nearest-first and admitted when their mean
//! distance to the members admitted so far is at most `tau`. Entries already
//! covered by an earlier cluster stay eligible as candidates, which is what
//! replicates entries shared between co-activation groups.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use crate::trace::{Distance, EntryId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ClusterId(pub u32);

impl ClusterId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    pub id: ClusterId,
    pub medoid: EntryId,
    /// Medoid first, then members in admission order.
    pub members: Vec<EntryId>,
    /// Mean distance to the members present when each member was admitted
    /// (0 for the medoid). Empty when the cluster was loaded from a file.
    pub admission: Vec<f64>,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, e: EntryId) -> bool {
        self.members.contains(&e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterParams {
    pub tau: f64,
    /// Upper bound on clusters per entry. `None` means unlimited.
    pub max_replicas: Option<usize>,
}

impl ClusterParams {
    pub fn new(tau: f64) -> Self {
        ClusterParams {
            tau,
            max_replicas: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidRadius(self.tau));
        }
        if self.max_replicas == Some(0) {
            return Err(Error::InvalidParameter("max_replicas must be at least 1"));
        }
        Ok(())
    }
}

/// Clusters plus the entry → clusters index.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    clusters: Vec<Cluster>,
    tau: f64,
    /// `replication[e]` lists the clusters containing `e`, ascending.
    replication: Vec<Vec<ClusterId>>,
}

impl ClusterSet {
    pub fn empty(n_entries: usize, tau: f64) -> Self {
        ClusterSet {
            clusters: Vec::new(),
            tau,
            replication: vec![Vec::new(); n_entries],
        }
    }

    /// Rebuilds a set from member lists (medoid first). Used by file loaders.
    pub fn from_members(n_entries: usize, tau: f64, clusters: Vec<Vec<EntryId>>) -> Result<Self> {
        let mut cs = ClusterSet::empty(n_entries, tau);
        for members in clusters {
            let medoid = *members.first().ok_or(Error::EmptyCluster)?;
            let id = cs.push_cluster(medoid)?;
            for &e in &members[1..] {
                if cs.clusters[id.index()].contains(e) {
                    return Err(Error::InvalidParameter("duplicate member in cluster"));
                }
                cs.push_member(id, e)?;
            }
            cs.clusters[id.index()].admission.clear();
        }
        Ok(cs)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn get(&self, id: ClusterId) -> Option<&Cluster> {
        self.clusters.get(id.index())
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn n_entries(&self) -> usize {
        self.replication.len()
    }

    pub fn clusters_of(&self, e: EntryId) -> &[ClusterId] {
        self.replication
            .get(e.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn replication(&self) -> &[Vec<ClusterId>] {
        &self.replication
    }

    /// Total stored copies across clusters.
    pub fn total_members(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    /// Entries that belong to no cluster.
    pub fn uncovered(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.replication
            .iter()
            .enumerate()
            .filter(|(_, r)| r.is_empty())
            .map(|(e, _)| EntryId(e as u32))
    }

    pub fn max_replication(&self) -> usize {
        self.replication.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Grows the entry space so ids up to `e` are addressable.
    pub fn ensure_entry(&mut self, e: EntryId) {
        if e.index() >= self.replication.len() {
            self.replication.resize(e.index() + 1, Vec::new());
        }
    }

    /// Opens a new singleton cluster around `medoid`.
    pub fn push_cluster(&mut self, medoid: EntryId) -> Result<ClusterId> {
        self.ensure_entry(medoid);
        let id = ClusterId(self.clusters.len() as u32);
        self.clusters.push(Cluster {
            id,
            medoid,
            members: vec![medoid],
            admission: vec![0.0],
        });
        self.replication[medoid.index()].push(id);
        Ok(id)
    }

    /// Appends `e` to cluster `id`. Cluster ids are visited in ascending order
    /// by every caller, so replication lists stay sorted.
    pub fn push_member(&mut self, id: ClusterId, e: EntryId) -> Result<()> {
        self.push_member_audited(id, e, f64::NAN)
    }

    fn push_member_audited(&mut self, id: ClusterId, e: EntryId, audit: f64) -> Result<()> {
        self.ensure_entry(e);
        let cluster = self
            .clusters
            .get_mut(id.index())
            .ok_or(Error::UnknownCluster(id.0))?;
        cluster.members.push(e);
        cluster.admission.push(audit);
        let reps = &mut self.replication[e.index()];
        let pos = reps.partition_point(|&c| c < id);
        reps.insert(pos, id);
        Ok(())
    }
}

/// `rho[e]`: neighbours of each entry within the radius.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DensityTable {
    pub rho: Vec<u32>,
}

/// Number of other entries within `tau` of each entry (`<=` comparison).
pub fn coactivation_density<D: Distance + ?Sized>(dist: &D, tau: f64) -> DensityTable {
    let n = dist.len();
    let mut rho = vec![0u32; n];
    for i in 0..n {
        for j in i + 1..n {
            if dist.distance(EntryId(i as u32), EntryId(j as u32)) <= tau {
                rho[i] += 1;
                rho[j] += 1;
            }
        }
    }
    DensityTable { rho }
}

/// Clusters `entries` (normally `0..dist.len()`) under radius `params.tau`.
///
/// Ties are broken towards the lower entry id, both in the medoid queue and
/// in each candidate queue.
pub fn build_clusters<D: Distance + ?Sized>(
    entries: &[EntryId],
    dist: &D,
    params: ClusterParams,
) -> Result<ClusterSet> {
    params.validate()?;
    let tau = params.tau;
    if let Some(bad) = entries.iter().find(|e| e.index() >= dist.len()) {
        return Err(Error::UnknownEntry(bad.0));
    }

    let mut cs = ClusterSet::empty(dist.len(), tau);
    if entries.is_empty() {
        return Ok(cs);
    }

    // Density over the entry subset only.
    let mut rho = vec![0u32; entries.len()];
    for a in 0..entries.len() {
        for b in a + 1..entries.len() {
            if dist.distance(entries[a], entries[b]) <= tau {
                rho[a] += 1;
                rho[b] += 1;
            }
        }
    }
    let mut medoid_queue: Vec<usize> = (0..entries.len()).collect();
    medoid_queue.sort_by(|&a, &b| rho[b].cmp(&rho[a]).then(entries[a].cmp(&entries[b])));

    let mut covered = vec![false; dist.len()];
    let mut uncovered = entries.len();
    let mut candidates: Vec<(f64, EntryId)> = Vec::new();

    for &qi in &medoid_queue {
        let medoid = entries[qi];
        if covered[medoid.index()] {
            continue;
        }

        candidates.clear();
        candidates.extend(
            entries
                .iter()
                .filter(|&&e| e != medoid)
                .map(|&e| (dist.distance(medoid, e), e))
                .filter(|&(d, _)| d <= tau),
        );
        candidates.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(Ordering::Equal)
                .then(a.1.cmp(&b.1))
        });

        let id = cs.push_cluster(medoid)?;
        for &(_, cand) in &candidates {
            if let Some(cap) = params.max_replicas {
                if cs.clusters_of(cand).len() >= cap {
                    continue;
                }
            }
            let members = &cs.clusters[id.index()].members;
            let sum: f64 = members.iter().map(|&m| dist.distance(cand, m)).sum();
            let mean = sum / members.len() as f64;
            if mean <= tau {
                cs.push_member_audited(id, cand, mean)?;
            }
        }

        for &m in &cs.clusters[id.index()].members {
            if !covered[m.index()] {
                covered[m.index()] = true;
                uncovered -= 1;
            }
        }
        if uncovered == 0 {
            break;
        }
    }
    Ok(cs)
}

/// Mean distance from the non-medoid members to the medoid, per cluster.
/// Singletons score 0.
pub fn cluster_quality<D: Distance + ?Sized>(cs: &ClusterSet, dist: &D) -> Vec<f64> {
    cs.clusters()
        .iter()
        .map(|c| {
            if c.members.len() < 2 {
                return 0.0;
            }
            let sum: f64 = c.members[1..]
                .iter()
                .map(|&m| dist.distance(m, c.medoid))
                .sum();
            sum / (c.members.len() - 1) as f64
        })
        .collect()
}

/// Mean of [`cluster_quality`] over clusters with at least two members.
pub fn mean_quality<D: Distance + ?Sized>(cs: &ClusterSet, dist: &D) -> f64 {
    let q = cluster_quality(cs, dist);
    let multi: Vec<f64> = cs
        .clusters()
        .iter()
        .zip(q)
        .filter(|(c, _)| c.len() > 1)
        .map(|(_, q)| q)
        .collect();
    if multi.is_empty() {
        0.0
    } else {
        multi.iter().sum::<f64>() / multi.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::DistanceMatrix;

    fn all(n: u32) -> Vec<EntryId> {
        (0..n).map(EntryId).collect()
    }

    fn members(cs: &ClusterSet) -> Vec<Vec<u32>> {
        cs.clusters()
            .iter()
            .map(|c| c.members.iter().map(|e| e.0).collect())
            .collect()
    }

    fn matrix(n: usize, pairs: &[((usize, usize), f64)]) -> DistanceMatrix {
        DistanceMatrix::from_fn(n, |i, j| {
            pairs
                .iter()
                .find(|((a, b), _)| (*a, *b) == (i, j) || (*a, *b) == (j, i))
                .map(|(_, d)| *d)
                .unwrap_or(1.0)
        })
    }

    #[test]
    fn density_examples() {
        let d = DistanceMatrix::uniform(3, 0.2);
        assert_eq!(coactivation_density(&d, 0.5).rho, vec![2, 2, 2]);
        let d = DistanceMatrix::uniform(3, 1.0);
        assert_eq!(coactivation_density(&d, 0.5).rho, vec![0, 0, 0]);
        let d = matrix(3, &[((0, 1), 0.3), ((0, 2), 0.6), ((1, 2), 0.4)]);
        assert_eq!(coactivation_density(&d, 0.5).rho, vec![1, 2, 1]);
    }

    #[test]
    fn density_threshold_is_inclusive() {
        let d = DistanceMatrix::uniform(2, 0.5);
        assert_eq!(coactivation_density(&d, 0.5).rho, vec![1, 1]);
    }

    #[test]
    fn identical_entries_form_one_cluster() {
        let d = DistanceMatrix::uniform(4, 0.0);
        let cs = build_clusters(&all(4), &d, ClusterParams::new(0.5)).unwrap();
        assert_eq!(members(&cs), vec![vec![0, 1, 2, 3]]);
        assert_eq!(cs.clusters()[0].medoid, EntryId(0));
    }

    #[test]
    fn unrelated_entries_become_singletons() {
        let d = DistanceMatrix::uniform(4, 1.0);
        let cs = build_clusters(&all(4), &d, ClusterParams::new(0.5)).unwrap();
        assert_eq!(members(&cs), vec![vec![0], vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn shared_entry_is_replicated() {
        // A=0 co-activates with B=1 and C=2, which rarely co-activate.
        let d = matrix(3, &[((0, 1), 0.1), ((0, 2), 0.1), ((1, 2), 0.9)]);
        let cs = build_clusters(&all(3), &d, ClusterParams::new(0.3)).unwrap();
        // rho = [2, 1, 1]; A is the first medoid and takes B (nearest, lower
        // id); C is rejected (mean 0.5). C then seeds its own cluster and
        // pulls A in again.
        assert_eq!(members(&cs), vec![vec![0, 1], vec![2, 0]]);
        assert_eq!(cs.clusters_of(EntryId(0)), &[ClusterId(0), ClusterId(1)]);
        assert_eq!(cs.max_replication(), 2);
    }

    #[test]
    fn replica_cap_keeps_earliest() {
        let d = matrix(3, &[((0, 1), 0.1), ((0, 2), 0.1), ((1, 2), 0.9)]);
        let params = ClusterParams {
            tau: 0.3,
            max_replicas: Some(1),
        };
        let cs = build_clusters(&all(3), &d, params).unwrap();
        assert_eq!(members(&cs), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn radius_must_be_open_unit_interval() {
        let d = DistanceMatrix::uniform(2, 0.1);
        for tau in [0.0, 1.0, -0.5, 1.5, f64::NAN] {
            assert!(matches!(
                build_clusters(&all(2), &d, ClusterParams::new(tau)),
                Err(Error::InvalidRadius(_))
            ));
        }
    }

    #[test]
    fn quality_examples() {
        let d = matrix(3, &[((0, 1), 0.2), ((0, 2), 0.4), ((1, 2), 0.3)]);
        let cs = ClusterSet::from_members(4, 0.5, vec![vec![EntryId(0), EntryId(1), EntryId(2)]])
            .unwrap();
        let q = cluster_quality(&cs, &d);
        assert!((q[0] - 0.3).abs() < 1e-12);

        let single = ClusterSet::from_members(1, 0.5, vec![vec![EntryId(0)]]).unwrap();
        assert_eq!(
            cluster_quality(&single, &DistanceMatrix::uniform(1, 0.0)),
            vec![0.0]
        );
    }

    #[test]
    fn from_members_rejects_duplicates() {
        let r = ClusterSet::from_members(3, 0.5, vec![vec![EntryId(0), EntryId(1), EntryId(0)]]);
        assert!(r.is_err());
        assert_eq!(
            ClusterSet::from_members(3, 0.5, vec![vec![]]).unwrap_err(),
            Error::EmptyCluster
        );
    }
}
