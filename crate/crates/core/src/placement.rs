//! Two-tier layout: clusters striped over devices, plus what stays in DRAM.
//!
//! Clusters are laid out in id order behind a global pointer. Cluster `i`
//! starts on device `p mod n_disk` and its `k`-th member goes to
//! `(start + k) mod n_disk`; the pointer then advances by the cluster size,
//! so consecutive clusters continue the stripe where the previous one ended.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::cluster::{ClusterId, ClusterSet};
use crate::trace::EntryId;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DeviceSlot {
    pub device: u32,
    pub slot: u32,
}

/// Where each cluster starts its stripe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StartRule {
    /// Continue from the global pointer (balanced).
    #[default]
    GlobalPointer,
    /// Every cluster starts on device 0.
    FirstDevice,
    /// No striping: clusters are written back to back, filling device 0
    /// before moving on, `capacity` entries per device. Later members of a
    /// cluster stay on its first device.
    Contiguous { capacity: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementMap {
    n_disk: u32,
    /// `locations[e][k]` is the replica belonging to the `k`-th cluster that
    /// contains `e` (ascending cluster id).
    locations: Vec<Vec<DeviceSlot>>,
    cluster_start: Vec<u32>,
    global_pointer: u64,
    device_fill: Vec<u32>,
    rule: StartRule,
}

impl PlacementMap {
    pub fn new(n_disk: u32, n_entries: usize, rule: StartRule) -> Result<Self> {
        if n_disk == 0 {
            return Err(Error::NoDevices);
        }
        Ok(PlacementMap {
            n_disk,
            locations: vec![Vec::new(); n_entries],
            cluster_start: Vec::new(),
            global_pointer: 0,
            device_fill: vec![0; n_disk as usize],
            rule,
        })
    }

    pub fn n_disk(&self) -> u32 {
        self.n_disk
    }

    pub fn locations(&self) -> &[Vec<DeviceSlot>] {
        &self.locations
    }

    pub fn replicas(&self, e: EntryId) -> &[DeviceSlot] {
        self.locations
            .get(e.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn cluster_start(&self, c: ClusterId) -> Option<u32> {
        self.cluster_start.get(c.index()).copied()
    }

    pub fn cluster_starts(&self) -> &[u32] {
        &self.cluster_start
    }

    pub fn global_pointer(&self) -> u64 {
        self.global_pointer
    }

    /// Entries stored per device (replicas included).
    pub fn device_fill(&self) -> &[u32] {
        &self.device_fill
    }

    /// Distinct devices holding `e`, ascending.
    pub fn devices_of(&self, e: EntryId) -> Vec<u32> {
        let mut d: Vec<u32> = self.replicas(e).iter().map(|s| s.device).collect();
        d.sort_unstable();
        d.dedup();
        d
    }

    /// Number of distinct devices holding `e`.
    pub fn replication_factor(&self, e: EntryId) -> usize {
        self.devices_of(e).len()
    }

    fn put(&mut self, e: EntryId, device: u32) -> DeviceSlot {
        if e.index() >= self.locations.len() {
            self.locations.resize(e.index() + 1, Vec::new());
        }
        let fill = &mut self.device_fill[device as usize];
        let slot = DeviceSlot {
            device,
            slot: *fill,
        };
        *fill += 1;
        self.locations[e.index()].push(slot);
        slot
    }

    fn fill_device(&self, capacity: u64, pos: u64) -> u32 {
        ((pos / capacity.max(1)) as u32).min(self.n_disk - 1)
    }

    /// Opens a new cluster stripe of `members` at the pointer.
    pub fn place_cluster(&mut self, members: &[EntryId]) -> u32 {
        let start = match self.rule {
            StartRule::GlobalPointer => (self.global_pointer % self.n_disk as u64) as u32,
            StartRule::FirstDevice => 0,
            StartRule::Contiguous { capacity } => {
                let first = self.fill_device(capacity, self.global_pointer);
                for (k, &e) in members.iter().enumerate() {
                    let device = self.fill_device(capacity, self.global_pointer + k as u64);
                    self.put(e, device);
                }
                self.cluster_start.push(first);
                self.global_pointer += members.len() as u64;
                return first;
            }
        };
        for (k, &e) in members.iter().enumerate() {
            let device = ((start as u64 + k as u64) % self.n_disk as u64) as u32;
            self.put(e, device);
        }
        self.cluster_start.push(start);
        self.global_pointer += members.len() as u64;
        start
    }

    /// Continues cluster `c`'s stripe with one more member, on device
    /// `(start + size_before) mod n_disk`.
    pub fn extend_cluster(
        &mut self,
        c: ClusterId,
        size_before: usize,
        e: EntryId,
    ) -> Result<DeviceSlot> {
        let start = self.cluster_start(c).ok_or(Error::UnknownCluster(c.0))?;
        let device = match self.rule {
            StartRule::Contiguous { .. } => start,
            _ => ((start as u64 + size_before as u64) % self.n_disk as u64) as u32,
        };
        Ok(self.put(e, device))
    }

    /// Stores `e` at the next pointer position without any cluster stripe.
    pub fn append_sequential(&mut self, e: EntryId) -> DeviceSlot {
        let device = (self.global_pointer % self.n_disk as u64) as u32;
        self.global_pointer += 1;
        self.put(e, device)
    }

    /// Rebuilds a map from explicit replica lists (file loaders). Cluster
    /// starts are not recoverable from replica lists alone and stay empty.
    pub fn from_locations(n_disk: u32, locations: Vec<Vec<DeviceSlot>>) -> Result<Self> {
        if n_disk == 0 {
            return Err(Error::NoDevices);
        }
        let mut device_fill = vec![0u32; n_disk as usize];
        for slot in locations.iter().flatten() {
            let fill = device_fill
                .get_mut(slot.device as usize)
                .ok_or(Error::DimensionMismatch("replica device out of range"))?;
            *fill = (*fill).max(slot.slot + 1);
        }
        Ok(PlacementMap {
            n_disk,
            global_pointer: locations.iter().map(|l| l.len() as u64).sum(),
            locations,
            cluster_start: Vec::new(),
            device_fill,
            rule: StartRule::GlobalPointer,
        })
    }
}

/// Stripes every cluster, in id order, behind the global pointer.
pub fn place_clusters(cs: &ClusterSet, n_disk: u32) -> Result<PlacementMap> {
    place_clusters_with(cs, n_disk, StartRule::GlobalPointer)
}

pub fn place_clusters_with(cs: &ClusterSet, n_disk: u32, rule: StartRule) -> Result<PlacementMap> {
    let mut pm = PlacementMap::new(n_disk, cs.n_entries(), rule)?;
    for c in cs.clusters() {
        pm.place_cluster(&c.members);
    }
    Ok(pm)
}

/// Clusters back to back, `ceil(total members / n_disk)` entries per device.
pub fn place_contiguous(cs: &ClusterSet, n_disk: u32) -> Result<PlacementMap> {
    if n_disk == 0 {
        return Err(Error::NoDevices);
    }
    let capacity = (cs.total_members() as u64).div_ceil(n_disk as u64).max(1);
    place_clusters_with(cs, n_disk, StartRule::Contiguous { capacity })
}

/// Entry `e` on device `e mod n_disk`, one copy each, no clustering.
pub fn place_sequential(n_entries: usize, n_disk: u32) -> Result<PlacementMap> {
    let mut pm = PlacementMap::new(n_disk, n_entries, StartRule::GlobalPointer)?;
    for e in 0..n_entries {
        pm.append_sequential(EntryId(e as u32));
    }
    Ok(pm)
}

/// Costs feeding the cost-effectiveness score, in microseconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheScoreParams {
    /// Device addressing latency.
    pub t_base: f64,
    /// Transfer cost per entry.
    pub t_transfer: f64,
}

impl CacheScoreParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_base > 0.0 && self.t_transfer > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "t_base and t_transfer must be positive",
            ))
        }
    }
}

/// `f * (t_base + s * t_transfer) / s`: I/O time saved per cached entry.
pub fn cost_effectiveness(freq: f64, size: usize, p: CacheScoreParams) -> Result<f64> {
    if size == 0 {
        return Err(Error::EmptyCluster);
    }
    let s = size as f64;
    Ok(freq * (p.t_base + s * p.t_transfer) / s)
}

/// Greedy admission by descending score (ties: lower id); clusters that do
/// not fit the remaining budget are skipped and the scan continues.
pub fn select_hot_clusters(
    cs: &ClusterSet,
    freqs: &[i64],
    budget_entries: usize,
    p: CacheScoreParams,
) -> BTreeSet<ClusterId> {
    let mut ranked: Vec<(f64, ClusterId, usize)> = cs
        .clusters()
        .iter()
        .filter(|c| !c.is_empty())
        .map(|c| {
            let f = freqs.get(c.id.index()).copied().unwrap_or(0).max(0) as f64;
            let score = cost_effectiveness(f, c.len(), p).unwrap_or(0.0);
            (score, c.id, c.len())
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut hot = BTreeSet::new();
    let mut used = 0usize;
    for (_, id, size) in ranked {
        if used + size <= budget_entries {
            used += size;
            hot.insert(id);
        }
    }
    hot
}

/// What stays in DRAM: the medoid index, the local window and hot clusters.
#[derive(Debug, Clone, PartialEq)]
pub struct DramPlan {
    /// Per cluster: medoid and the device its stripe starts on.
    pub medoid_index: Vec<(EntryId, u32)>,
    pub window_capacity: usize,
    /// Most recent entries, oldest first.
    pub window: VecDeque<EntryId>,
    pub hot_cache: BTreeSet<ClusterId>,
    pub cache_budget_entries: usize,
}

impl DramPlan {
    /// Pushes a freshly decoded entry, dropping the oldest beyond capacity.
    pub fn slide_window(&mut self, e: EntryId) -> Option<EntryId> {
        self.window.push_back(e);
        if self.window.len() > self.window_capacity {
            self.window.pop_front()
        } else {
            None
        }
    }

    pub fn hot_entries(&self, cs: &ClusterSet) -> usize {
        self.hot_cache
            .iter()
            .filter_map(|&c| cs.get(c))
            .map(|c| c.len())
            .sum()
    }

    /// Marks every DRAM-resident entry (medoids, window, hot-cluster members)
    /// in a membership bitmap sized to cover `n_entries`.
    pub fn resident_bitmap(&self, cs: &ClusterSet, n_entries: usize) -> Vec<bool> {
        let mut bits = vec![false; n_entries];
        let mut mark = |e: EntryId| {
            if let Some(b) = bits.get_mut(e.index()) {
                *b = true;
            }
        };
        for &(m, _) in &self.medoid_index {
            mark(m);
        }
        for &e in &self.window {
            mark(e);
        }
        for &c in &self.hot_cache {
            if let Some(cl) = cs.get(c) {
                for &e in &cl.members {
                    mark(e);
                }
            }
        }
        bits
    }
}

/// Medoids of every cluster, the last `min(W, N)` entries as the window,
/// and the hot set chosen by [`select_hot_clusters`].
pub fn build_dram_plan(
    cs: &ClusterSet,
    pm: &PlacementMap,
    freqs: &[i64],
    window: usize,
    budget_entries: usize,
    p: CacheScoreParams,
) -> DramPlan {
    let medoid_index = cs
        .clusters()
        .iter()
        .map(|c| (c.medoid, pm.cluster_start(c.id).unwrap_or(0)))
        .collect();
    let n = cs.n_entries();
    let first = n.saturating_sub(window);
    DramPlan {
        medoid_index,
        window_capacity: window,
        window: (first..n).map(|e| EntryId(e as u32)).collect(),
        hot_cache: select_hot_clusters(cs, freqs, budget_entries, p),
        cache_budget_entries: budget_entries,
    }
}
