//! Retrieval scheduling: merge the activated clusters, drop what DRAM already
//! holds, then route each entry to one device bucket.
//!
//! Entries are routed in ascending replication factor. Single-copy entries go
//! straight to their device; replicated entries go to whichever holding
//! device currently has the shortest bucket. Submission batches take one head
//! entry from every non-empty bucket per round.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{ClusterId, ClusterSet};
use crate::placement::PlacementMap;
use crate::trace::EntryId;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RetrievalRequest {
    pub activated_clusters: BTreeSet<ClusterId>,
    pub dram_resident: BTreeSet<EntryId>,
}

/// How an entry with several replicas picks its device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoutePolicy {
    /// Least-loaded holding device, ties to the lowest device id.
    #[default]
    Balanced,
    /// Always the first listed replica.
    FirstReplica,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IoPlan {
    /// Per device, entries in assignment order.
    pub buckets: Vec<Vec<EntryId>>,
    /// Submission rounds: at most one `(device, entry)` per device each.
    pub batches: Vec<Vec<(u32, EntryId)>>,
}

impl IoPlan {
    pub fn empty(n_disk: u32) -> Self {
        IoPlan {
            buckets: vec![Vec::new(); n_disk as usize],
            batches: Vec::new(),
        }
    }

    pub fn from_buckets(buckets: Vec<Vec<EntryId>>) -> Self {
        let rounds = buckets.iter().map(Vec::len).max().unwrap_or(0);
        let batches = (0..rounds)
            .map(|r| {
                buckets
                    .iter()
                    .enumerate()
                    .filter_map(|(d, b)| b.get(r).map(|&e| (d as u32, e)))
                    .collect()
            })
            .collect();
        IoPlan { buckets, batches }
    }

    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    pub fn total_entries(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }
}

fn check_clusters<'a>(
    activated: impl IntoIterator<Item = &'a ClusterId>,
    cs: &ClusterSet,
) -> Result<()> {
    for &c in activated {
        if cs.get(c).is_none() {
            return Err(Error::UnknownCluster(c.0));
        }
    }
    Ok(())
}

/// Union of the activated clusters' members minus everything DRAM-resident.
pub fn merge_activated(req: &RetrievalRequest, cs: &ClusterSet) -> Result<BTreeSet<EntryId>> {
    check_clusters(&req.activated_clusters, cs)?;
    Ok(req
        .activated_clusters
        .iter()
        .flat_map(|&c| cs.clusters()[c.index()].members.iter().copied())
        .filter(|e| !req.dram_resident.contains(e))
        .collect())
}

/// Same merge against a residency bitmap; returns an ascending list.
pub fn merge_with_bitmap(
    activated: &BTreeSet<ClusterId>,
    resident: &[bool],
    cs: &ClusterSet,
) -> Result<Vec<EntryId>> {
    check_clusters(activated, cs)?;
    let mut seen = vec![false; cs.n_entries()];
    let mut out = Vec::new();
    for &c in activated {
        for &e in &cs.clusters()[c.index()].members {
            if !resident.get(e.index()).copied().unwrap_or(false) && !seen[e.index()] {
                seen[e.index()] = true;
                out.push(e);
            }
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Every member occurrence of every activated cluster (duplicates kept),
/// minus DRAM-resident entries. The no-deduplication ablation.
pub fn merge_keep_duplicates(
    activated: &BTreeSet<ClusterId>,
    resident: &[bool],
    cs: &ClusterSet,
) -> Result<Vec<EntryId>> {
    check_clusters(activated, cs)?;
    Ok(activated
        .iter()
        .flat_map(|&c| cs.clusters()[c.index()].members.iter().copied())
        .filter(|e| !resident.get(e.index()).copied().unwrap_or(false))
        .collect())
}

/// Replica-aware bucket scheduling of a deduplicated entry set.
pub fn schedule<'a>(
    e_io: impl IntoIterator<Item = &'a EntryId>,
    pm: &PlacementMap,
) -> Result<IoPlan> {
    schedule_with(e_io, pm, RoutePolicy::Balanced)
}

/// Routes every item of `items`; duplicates are routed independently.
pub fn schedule_with<'a>(
    items: impl IntoIterator<Item = &'a EntryId>,
    pm: &PlacementMap,
    policy: RoutePolicy,
) -> Result<IoPlan> {
    let mut work: Vec<(usize, EntryId, Vec<u32>)> = Vec::new();
    for &e in items {
        let devices = match policy {
            RoutePolicy::Balanced => pm.devices_of(e),
            RoutePolicy::FirstReplica => pm
                .replicas(e)
                .first()
                .map(|s| s.device)
                .into_iter()
                .collect(),
        };
        if devices.is_empty() {
            return Err(Error::NoReplica(e.0));
        }
        work.push((pm.replication_factor(e), e, devices));
    }
    work.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut buckets: Vec<Vec<EntryId>> = vec![Vec::new(); pm.n_disk() as usize];
    for (_, e, devices) in work {
        let target = devices
            .iter()
            .copied()
            .min_by_key(|&d| (buckets[d as usize].len(), d))
            .expect("non-empty device list");
        buckets[target as usize].push(e);
    }
    Ok(IoPlan::from_buckets(buckets))
}

/// Longest bucket: the critical-path device.
pub fn max_load(plan: &IoPlan) -> usize {
    plan.buckets.iter().map(Vec::len).max().unwrap_or(0)
}
