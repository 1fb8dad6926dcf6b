//! Online adaptation during decoding.
//!
//! Newly decoded entries stay in the DRAM window for `W` steps. During that
//! time we count, per cluster, the steps in which the new entry and the
//! cluster's medoid were both activated. Once `W` steps are observed the
//! entry joins every cluster with `1 - count / W < tau` (or opens its own
//! cluster when none qualifies) and is written to the next device of each
//! joined cluster's stripe.
//!
//! The hot-cluster cache tracks a signed activation counter per cluster:
//! +1 when activated, -1 when resident but idle. Residents sit in a min-heap
//! keyed by the cost-effectiveness score; a missed cluster displaces the
//! cheapest residents only if it scores strictly higher.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use crate::cluster::{ClusterId, ClusterSet};
use crate::placement::{cost_effectiveness, CacheScoreParams, DeviceSlot, PlacementMap};
use crate::trace::{ActivationStep, Distance, EntryId};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
struct Pending {
    observed: u32,
    medoid_cooccur: BTreeMap<ClusterId, u32>,
    /// Activation set of the step that created the entry.
    created_with: Vec<EntryId>,
}

/// Per new entry: observed window steps and co-activation counts with each
/// cluster medoid.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowStats {
    window_size: u32,
    pending: BTreeMap<EntryId, Pending>,
}

impl WindowStats {
    pub fn new(window_size: u32) -> Self {
        WindowStats {
            window_size: window_size.max(1),
            pending: BTreeMap::new(),
        }
    }

    pub fn window_size(&self) -> u32 {
        self.window_size
    }

    /// Starts tracking `e`, remembering the activation set it was created in.
    pub fn register(&mut self, e: EntryId, created_with: &[EntryId]) {
        self.pending.insert(
            e,
            Pending {
                created_with: created_with.to_vec(),
                ..Pending::default()
            },
        );
    }

    /// Accounts one step. `active_medoid_clusters` lists clusters whose
    /// medoid is in `activated`.
    pub fn observe(&mut self, activated: &[EntryId], active_medoid_clusters: &[ClusterId]) {
        for (e, p) in self.pending.iter_mut() {
            if p.observed >= self.window_size {
                continue;
            }
            p.observed += 1;
            if activated.binary_search(e).is_ok() {
                for &c in active_medoid_clusters {
                    *p.medoid_cooccur.entry(c).or_insert(0) += 1;
                }
            }
        }
    }

    pub fn count(&self, e: EntryId, c: ClusterId) -> u32 {
        self.pending
            .get(&e)
            .and_then(|p| p.medoid_cooccur.get(&c).copied())
            .unwrap_or(0)
    }

    pub fn observed(&self, e: EntryId) -> Option<u32> {
        self.pending.get(&e).map(|p| p.observed)
    }

    pub fn is_pending(&self, e: EntryId) -> bool {
        self.pending.contains_key(&e)
    }

    pub fn pending(&self) -> impl Iterator<Item = EntryId> + '_ {
        self.pending.keys().copied()
    }

    /// Entries with a full window, ascending.
    pub fn ready(&self) -> Vec<EntryId> {
        self.pending
            .iter()
            .filter(|(_, p)| p.observed >= self.window_size)
            .map(|(&e, _)| e)
            .collect()
    }

    fn created_with(&self, e: EntryId) -> &[EntryId] {
        self.pending
            .get(&e)
            .map(|p| p.created_with.as_slice())
            .unwrap_or(&[])
    }

    pub fn remove(&mut self, e: EntryId) {
        self.pending.remove(&e);
    }

    /// Sets counters directly; for tests and replays.
    pub fn set_counts(&mut self, e: EntryId, observed: u32, counts: &[(ClusterId, u32)]) {
        let p = self.pending.entry(e).or_default();
        p.observed = observed;
        p.medoid_cooccur = counts.iter().copied().collect();
    }
}

/// `1 - f(e_new, medoid(c)) / W`.
pub fn new_entry_distance(stats: &WindowStats, e: EntryId, c: ClusterId) -> Result<f64> {
    let observed = stats.observed(e).ok_or(Error::UnknownEntry(e.0))?;
    if observed < stats.window_size {
        return Err(Error::NotReady {
            entry: e.0,
            observed,
            window: stats.window_size,
        });
    }
    Ok(1.0 - stats.count(e, c) as f64 / stats.window_size as f64)
}

/// How a matured entry picks its cluster(s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AssignPolicy {
    /// Every cluster whose windowed distance is below `tau`.
    Coactivation { tau: f64 },
    /// The currently smallest cluster.
    MinSize,
    /// The cluster whose medoid is nearest, in the offline distance matrix,
    /// to the entries active when the new entry was created.
    MinDiff,
}

fn join(
    cs: &mut ClusterSet,
    pm: &mut PlacementMap,
    c: ClusterId,
    e: EntryId,
) -> Result<(ClusterId, DeviceSlot)> {
    let size = cs.get(c).ok_or(Error::UnknownCluster(c.0))?.len();
    let slot = pm.extend_cluster(c, size, e)?;
    cs.push_member(c, e)?;
    Ok((c, slot))
}

fn open_singleton(
    cs: &mut ClusterSet,
    pm: &mut PlacementMap,
    e: EntryId,
) -> Result<(ClusterId, DeviceSlot)> {
    let c = cs.push_cluster(e)?;
    pm.place_cluster(&[e]);
    let slot = *pm.replicas(e).last().expect("just placed");
    Ok((c, slot))
}

/// Windowed assignment of one matured entry. Returns one `(cluster, slot)`
/// per replica written.
pub fn assign_new_entry(
    e: EntryId,
    stats: &WindowStats,
    cs: &mut ClusterSet,
    pm: &mut PlacementMap,
    tau: f64,
) -> Result<Vec<(ClusterId, DeviceSlot)>> {
    let mut targets = Vec::new();
    for c in cs.clusters() {
        if c.medoid == e {
            continue;
        }
        if new_entry_distance(stats, e, c.id)? < tau {
            targets.push(c.id);
        }
    }
    if targets.is_empty() {
        return Ok(vec![open_singleton(cs, pm, e)?]);
    }
    targets.into_iter().map(|c| join(cs, pm, c, e)).collect()
}

fn smallest_cluster(cs: &ClusterSet) -> Option<ClusterId> {
    cs.clusters()
        .iter()
        .min_by_key(|c| (c.len(), c.id))
        .map(|c| c.id)
}

/// Assignment under any policy. `offline` is only consulted by
/// [`AssignPolicy::MinDiff`].
pub fn assign_with_policy<D: Distance + ?Sized>(
    e: EntryId,
    policy: AssignPolicy,
    stats: &WindowStats,
    cs: &mut ClusterSet,
    pm: &mut PlacementMap,
    offline: &D,
) -> Result<Vec<(ClusterId, DeviceSlot)>> {
    match policy {
        AssignPolicy::Coactivation { tau } => assign_new_entry(e, stats, cs, pm, tau),
        AssignPolicy::MinSize => match smallest_cluster(cs) {
            Some(c) => Ok(vec![join(cs, pm, c, e)?]),
            None => Ok(vec![open_singleton(cs, pm, e)?]),
        },
        AssignPolicy::MinDiff => {
            let n = offline.len();
            let context: Vec<EntryId> = stats
                .created_with(e)
                .iter()
                .copied()
                .filter(|x| x.index() < n)
                .collect();
            if context.is_empty() {
                return assign_with_policy(e, AssignPolicy::MinSize, stats, cs, pm, offline);
            }
            let mut best: Option<(f64, ClusterId)> = None;
            for c in cs.clusters() {
                if c.medoid.index() >= n {
                    continue;
                }
                let d = context
                    .iter()
                    .map(|&x| offline.distance(c.medoid, x))
                    .sum::<f64>()
                    / context.len() as f64;
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, c.id));
                }
            }
            match best {
                Some((_, c)) => Ok(vec![join(cs, pm, c, e)?]),
                None => assign_with_policy(e, AssignPolicy::MinSize, stats, cs, pm, offline),
            }
        }
    }
}

/// One matured entry and where it went.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub entry: EntryId,
    pub placed: Vec<(ClusterId, DeviceSlot)>,
    /// Set when the entry opened its own cluster.
    pub new_cluster: Option<ClusterId>,
}

/// Drives [`WindowStats`] over a stream of steps and assigns entries as
/// their windows fill.
#[derive(Debug, Clone)]
pub struct Adapter {
    stats: WindowStats,
    policy: AssignPolicy,
    medoids: BTreeMap<EntryId, Vec<ClusterId>>,
    indexed: usize,
}

impl Adapter {
    pub fn new(window: u32, policy: AssignPolicy) -> Self {
        Adapter {
            stats: WindowStats::new(window),
            policy,
            medoids: BTreeMap::new(),
            indexed: 0,
        }
    }

    pub fn stats(&self) -> &WindowStats {
        &self.stats
    }

    fn refresh_medoids(&mut self, cs: &ClusterSet) {
        for c in &cs.clusters()[self.indexed.min(cs.len())..] {
            self.medoids.entry(c.medoid).or_default().push(c.id);
        }
        self.indexed = cs.len();
    }

    /// Registers the step's new entries, observes its activations, and
    /// assigns every entry whose window just filled.
    pub fn step<D: Distance + ?Sized>(
        &mut self,
        step: &ActivationStep,
        cs: &mut ClusterSet,
        pm: &mut PlacementMap,
        offline: &D,
    ) -> Result<Vec<Assignment>> {
        self.refresh_medoids(cs);
        for &e in step.new_entries() {
            cs.ensure_entry(e);
            self.stats.register(e, step.activated());
        }
        let active: Vec<ClusterId> = step
            .activated()
            .iter()
            .filter_map(|e| self.medoids.get(e))
            .flatten()
            .copied()
            .collect();
        self.stats.observe(step.activated(), &active);

        let mut out = Vec::new();
        for e in self.stats.ready() {
            let before = cs.len();
            let placed = assign_with_policy(e, self.policy, &self.stats, cs, pm, offline)?;
            self.stats.remove(e);
            let new_cluster = (cs.len() > before).then_some(ClusterId(before as u32));
            self.refresh_medoids(cs);
            out.push(Assignment {
                entry: e,
                placed,
                new_cluster,
            });
        }
        Ok(out)
    }
}

/// `score` ordered by `f64::total_cmp`, so it can live in a heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score(f64);

impl Eq for Score {}

impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Admissions and evictions from one replacement round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Replacement {
    pub admitted: Vec<ClusterId>,
    pub evicted: Vec<ClusterId>,
}

/// A DRAM cache of whole clusters under an entry budget.
pub trait ClusterCache {
    fn resident(&self) -> &BTreeSet<ClusterId>;

    /// Feeds one step's activated clusters. Returns how many were already
    /// resident (hits) before the cache reacted.
    fn access(&mut self, activated: &BTreeSet<ClusterId>, cs: &ClusterSet) -> usize;
}

/// Cost-effectiveness cache with frequency feedback.
#[derive(Debug, Clone)]
pub struct CacheState {
    freq: Vec<i64>,
    resident: BTreeSet<ClusterId>,
    heap: BinaryHeap<Reverse<(Score, ClusterId)>>,
    budget: usize,
    params: CacheScoreParams,
}

impl CacheState {
    pub fn new(
        freqs: Vec<i64>,
        resident: BTreeSet<ClusterId>,
        budget: usize,
        params: CacheScoreParams,
    ) -> Self {
        CacheState {
            freq: freqs,
            resident,
            heap: BinaryHeap::new(),
            budget,
            params,
        }
    }

    pub fn freq(&self, c: ClusterId) -> i64 {
        self.freq.get(c.index()).copied().unwrap_or(0)
    }

    pub fn freqs(&self) -> &[i64] {
        &self.freq
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    fn bump(&mut self, c: ClusterId, delta: i64) {
        if c.index() >= self.freq.len() {
            self.freq.resize(c.index() + 1, 0);
        }
        self.freq[c.index()] += delta;
    }

    /// Cost-effectiveness score with the counter clamped at zero.
    pub fn score(&self, c: ClusterId, cs: &ClusterSet) -> f64 {
        let size = cs.get(c).map(|c| c.len()).unwrap_or(0);
        cost_effectiveness(self.freq(c).max(0) as f64, size, self.params).unwrap_or(0.0)
    }

    pub fn used_entries(&self, cs: &ClusterSet) -> usize {
        self.resident
            .iter()
            .filter_map(|&c| cs.get(c))
            .map(|c| c.len())
            .sum()
    }

    /// +1 for every activated cluster, -1 for resident clusters that were not.
    pub fn update_frequencies(&mut self, activated: &BTreeSet<ClusterId>) {
        for &c in activated {
            self.bump(c, 1);
        }
        let idle: Vec<ClusterId> = self.resident.difference(activated).copied().collect();
        for c in idle {
            self.bump(c, -1);
        }
    }

    fn rebuild_heap(&mut self, cs: &ClusterSet) {
        let entries: Vec<_> = self
            .resident
            .iter()
            .map(|&c| Reverse((Score(self.score(c, cs)), c)))
            .collect();
        self.heap = BinaryHeap::from(entries);
    }

    /// Evicts lowest-score residents until the budget holds again; clusters
    /// may have grown through adaptation since they were admitted.
    pub fn enforce_budget(&mut self, cs: &ClusterSet) -> Vec<ClusterId> {
        self.rebuild_heap(cs);
        let mut used = self.used_entries(cs);
        let mut evicted = Vec::new();
        while used > self.budget {
            let Some(Reverse((_, c))) = self.heap.pop() else {
                break;
            };
            used -= cs.get(c).map(|c| c.len()).unwrap_or(0);
            self.resident.remove(&c);
            evicted.push(c);
        }
        evicted
    }

    /// Tries to admit each candidate (highest score first).
    pub fn cache_replace(&mut self, candidates: &[ClusterId], cs: &ClusterSet) -> Replacement {
        let mut out = Replacement {
            evicted: self.enforce_budget(cs),
            ..Replacement::default()
        };
        let mut used = self.used_entries(cs);

        let mut ranked: Vec<(f64, ClusterId, usize)> = candidates
            .iter()
            .filter(|c| !self.resident.contains(c))
            .filter_map(|&c| cs.get(c).map(|cl| (self.score(c, cs), c, cl.len())))
            .filter(|&(_, _, size)| size > 0 && size <= self.budget)
            .collect();
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.dedup_by_key(|x| x.1);

        for (score, c, size) in ranked {
            if used + size <= self.budget {
                used += size;
                self.resident.insert(c);
                self.heap.push(Reverse((Score(score), c)));
                out.admitted.push(c);
                continue;
            }
            let mut popped = Vec::new();
            let mut freed = 0usize;
            while used - freed + size > self.budget {
                match self.heap.peek() {
                    Some(Reverse((s, _))) if s.0 < score => {
                        let Reverse((s, v)) = self.heap.pop().expect("peeked");
                        freed += cs.get(v).map(|c| c.len()).unwrap_or(0);
                        popped.push((s, v));
                    }
                    _ => break,
                }
            }
            if used - freed + size <= self.budget {
                for (_, v) in popped {
                    self.resident.remove(&v);
                    out.evicted.push(v);
                }
                used = used - freed + size;
                self.resident.insert(c);
                self.heap.push(Reverse((Score(score), c)));
                out.admitted.push(c);
            } else {
                for (s, v) in popped {
                    self.heap.push(Reverse((s, v)));
                }
            }
        }
        out
    }

    /// Minimum resident score, if anything is resident.
    pub fn min_score(&mut self, cs: &ClusterSet) -> Option<f64> {
        self.rebuild_heap(cs);
        self.heap.peek().map(|Reverse((s, _))| s.0)
    }
}

/// Free-function form of [`CacheState::update_frequencies`] for an explicit
/// resident set.
pub fn update_frequencies(
    freq: &mut Vec<i64>,
    activated: &BTreeSet<ClusterId>,
    resident: &BTreeSet<ClusterId>,
) {
    let mut bump = |c: ClusterId, d: i64| {
        if c.index() >= freq.len() {
            freq.resize(c.index() + 1, 0);
        }
        freq[c.index()] += d;
    };
    for &c in activated {
        bump(c, 1);
    }
    for &c in resident.difference(activated) {
        bump(c, -1);
    }
}

impl ClusterCache for CacheState {
    fn resident(&self) -> &BTreeSet<ClusterId> {
        &self.resident
    }

    fn access(&mut self, activated: &BTreeSet<ClusterId>, cs: &ClusterSet) -> usize {
        let hits = activated.intersection(&self.resident).count();
        self.update_frequencies(activated);
        let misses: Vec<ClusterId> = activated.difference(&self.resident).copied().collect();
        self.cache_replace(&misses, cs);
        hits
    }
}

/// Least-recently-used cluster cache: every miss is admitted, evicting the
/// stalest residents until it fits.
#[derive(Debug, Clone)]
pub struct LruCache {
    resident: BTreeSet<ClusterId>,
    by_age: BTreeMap<u64, ClusterId>,
    stamp: Vec<Option<u64>>,
    clock: u64,
    budget: usize,
}

impl LruCache {
    pub fn new(budget: usize) -> Self {
        LruCache {
            resident: BTreeSet::new(),
            by_age: BTreeMap::new(),
            stamp: Vec::new(),
            clock: 0,
            budget,
        }
    }

    fn touch(&mut self, c: ClusterId) {
        if c.index() >= self.stamp.len() {
            self.stamp.resize(c.index() + 1, None);
        }
        if let Some(old) = self.stamp[c.index()].take() {
            self.by_age.remove(&old);
        }
        self.clock += 1;
        self.stamp[c.index()] = Some(self.clock);
        self.by_age.insert(self.clock, c);
    }

    fn evict_oldest(&mut self) -> Option<ClusterId> {
        let (&age, &c) = self.by_age.iter().next()?;
        self.by_age.remove(&age);
        self.stamp[c.index()] = None;
        self.resident.remove(&c);
        Some(c)
    }

    fn used(&self, cs: &ClusterSet) -> usize {
        self.resident
            .iter()
            .filter_map(|&c| cs.get(c))
            .map(|c| c.len())
            .sum()
    }
}

impl ClusterCache for LruCache {
    fn resident(&self) -> &BTreeSet<ClusterId> {
        &self.resident
    }

    fn access(&mut self, activated: &BTreeSet<ClusterId>, cs: &ClusterSet) -> usize {
        let hits = activated.intersection(&self.resident).count();
        for &c in activated {
            let Some(size) = cs.get(c).map(|c| c.len()) else {
                continue;
            };
            if size > self.budget {
                continue;
            }
            if !self.resident.contains(&c) {
                while self.used(cs) + size > self.budget {
                    if self.evict_oldest().is_none() {
                        break;
                    }
                }
                self.resident.insert(c);
            }
            self.touch(c);
        }
        while self.used(cs) > self.budget {
            if self.evict_oldest().is_none() {
                break;
            }
        }
        hits
    }
}

/// Replays a stream of activated-cluster sets; returns `(hits, accesses)`.
pub fn replay_cache<C: ClusterCache + ?Sized>(
    cache: &mut C,
    stream: &[BTreeSet<ClusterId>],
    cs: &ClusterSet,
) -> (usize, usize) {
    let mut hits = 0;
    let mut accesses = 0;
    for step in stream {
        hits += cache.access(step, cs);
        accesses += step.len();
    }
    (hits, accesses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::placement::{place_clusters, StartRule};
    use crate::trace::DistanceMatrix;

    fn e(v: u32) -> EntryId {
        EntryId(v)
    }

    fn c(v: u32) -> ClusterId {
        ClusterId(v)
    }

    fn set(v: &[u32]) -> BTreeSet<ClusterId> {
        v.iter().map(|&x| ClusterId(x)).collect()
    }

    fn sized(sizes: &[u32]) -> ClusterSet {
        let mut next = 0;
        let clusters = sizes
            .iter()
            .map(|&s| {
                let m = (next..next + s).map(EntryId).collect();
                next += s;
                m
            })
            .collect();
        ClusterSet::from_members(next as usize, 0.5, clusters).unwrap()
    }

    fn params() -> CacheScoreParams {
        CacheScoreParams {
            t_base: 100.0,
            t_transfer: 10.0,
        }
    }

    #[test]
    fn windowed_distance_examples() {
        let mut s = WindowStats::new(4);
        s.set_counts(e(10), 4, &[(c(0), 4)]);
        assert_eq!(new_entry_distance(&s, e(10), c(0)).unwrap(), 0.0);
        assert_eq!(new_entry_distance(&s, e(10), c(1)).unwrap(), 1.0);

        let mut s = WindowStats::new(8);
        s.set_counts(e(10), 8, &[(c(0), 6)]);
        assert_eq!(new_entry_distance(&s, e(10), c(0)).unwrap(), 0.25);
    }

    #[test]
    fn distance_before_window_fills_is_not_ready() {
        let mut s = WindowStats::new(4);
        s.set_counts(e(3), 2, &[]);
        assert_eq!(
            new_entry_distance(&s, e(3), c(0)).unwrap_err(),
            Error::NotReady {
                entry: 3,
                observed: 2,
                window: 4
            }
        );
        assert_eq!(
            new_entry_distance(&s, e(9), c(0)).unwrap_err(),
            Error::UnknownEntry(9)
        );
    }

    #[test]
    fn observe_counts_medoid_coactivation() {
        let mut s = WindowStats::new(3);
        s.register(e(5), &[]);
        s.observe(&[e(0), e(5)], &[c(0)]);
        s.observe(&[e(0)], &[c(0)]);
        s.observe(&[e(0), e(5)], &[c(0), c(1)]);
        s.observe(&[e(0), e(5)], &[c(0)]);
        assert_eq!(s.count(e(5), c(0)), 2);
        assert_eq!(s.count(e(5), c(1)), 1);
        assert_eq!(s.ready(), vec![e(5)]);
    }

    #[test]
    fn assignment_continues_stripe() {
        // Cluster 0 has 3 members, cluster 1 has 5 and starts on device 3.
        let mut cs = sized(&[3, 5]);
        let mut pm = place_clusters(&cs, 4).unwrap();
        assert_eq!(pm.cluster_start(c(1)), Some(3));
        let mut s = WindowStats::new(4);
        s.set_counts(e(8), 4, &[(c(1), 4)]);
        let placed = assign_new_entry(e(8), &s, &mut cs, &mut pm, 0.5).unwrap();
        assert_eq!(placed.len(), 1);
        assert_eq!(placed[0].0, c(1));
        assert_eq!(placed[0].1.device, (3 + 5) % 4);
        assert_eq!(cs.get(c(1)).unwrap().len(), 6);
        assert_eq!(cs.clusters_of(e(8)), &[c(1)]);
    }

    #[test]
    fn stripe_arithmetic_wraps() {
        // start 2, size 5, four devices -> device 3
        let mut cs = sized(&[2, 5]);
        let mut pm = place_clusters(&cs, 4).unwrap();
        assert_eq!(pm.cluster_start(c(1)), Some(2));
        let mut s = WindowStats::new(2);
        s.set_counts(e(7), 2, &[(c(1), 2)]);
        let placed = assign_new_entry(e(7), &s, &mut cs, &mut pm, 0.5).unwrap();
        assert_eq!(placed[0].1.device, 3);
    }

    #[test]
    fn multiple_qualifying_clusters_replicate() {
        let mut cs = sized(&[2, 2]);
        let mut pm = place_clusters(&cs, 2).unwrap();
        let mut s = WindowStats::new(4);
        s.set_counts(e(4), 4, &[(c(0), 4), (c(1), 3)]);
        let placed = assign_new_entry(e(4), &s, &mut cs, &mut pm, 0.5).unwrap();
        assert_eq!(placed.len(), 2);
        assert_eq!(cs.clusters_of(e(4)), &[c(0), c(1)]);
        assert_eq!(pm.replicas(e(4)).len(), 2);
    }

    #[test]
    fn threshold_is_strict() {
        let mut cs = sized(&[2]);
        let mut pm = place_clusters(&cs, 2).unwrap();
        let mut s = WindowStats::new(4);
        s.set_counts(e(2), 4, &[(c(0), 2)]);
        // distance 0.5 is not < 0.5
        let placed = assign_new_entry(e(2), &s, &mut cs, &mut pm, 0.5).unwrap();
        assert_eq!(placed[0].0, c(1));
    }

    #[test]
    fn unmatched_entry_opens_singleton() {
        let mut cs = sized(&[3]);
        let mut pm = place_clusters(&cs, 2).unwrap();
        let mut s = WindowStats::new(4);
        s.set_counts(e(3), 4, &[]);
        let placed = assign_new_entry(e(3), &s, &mut cs, &mut pm, 0.5).unwrap();
        assert_eq!(placed[0].0, c(1));
        assert_eq!(cs.get(c(1)).unwrap().medoid, e(3));
        // pointer was 3, so the singleton lands on device 1
        assert_eq!(placed[0].1.device, 1);
        assert_eq!(pm.global_pointer(), 4);
    }

    #[test]
    fn min_size_and_min_diff_policies() {
        let offline = DistanceMatrix::from_fn(6, |i, j| if i / 3 == j / 3 { 0.1 } else { 0.9 });
        let mut cs = sized(&[3, 3]);
        cs.push_member(c(1), e(6)).unwrap();
        let mut pm = PlacementMap::new(2, 7, StartRule::GlobalPointer).unwrap();
        for cl in cs.clusters() {
            pm.place_cluster(&cl.members);
        }
        let mut s = WindowStats::new(1);
        s.register(e(7), &[e(0), e(1)]);
        s.set_counts(e(7), 1, &[]);
        let got = assign_with_policy(e(7), AssignPolicy::MinSize, &s, &mut cs, &mut pm, &offline)
            .unwrap();
        assert_eq!(got[0].0, c(0));

        let mut s = WindowStats::new(1);
        s.register(e(8), &[e(3), e(4)]);
        s.set_counts(e(8), 1, &[]);
        let got = assign_with_policy(e(8), AssignPolicy::MinDiff, &s, &mut cs, &mut pm, &offline)
            .unwrap();
        assert_eq!(got[0].0, c(1));
    }

    #[test]
    fn frequency_updates() {
        let mut f = vec![5, 5, 5];
        update_frequencies(&mut f, &set(&[1]), &set(&[1, 2]));
        assert_eq!(f, vec![5, 6, 4]);
        update_frequencies(&mut f, &set(&[1, 2]), &set(&[1, 2]));
        assert_eq!(f, vec![5, 7, 5]);
    }

    #[test]
    fn empty_cache_admits_fitting_cluster() {
        let cs = sized(&[4, 4]);
        let mut st = CacheState::new(vec![0, 0], BTreeSet::new(), 4, params());
        let r = st.cache_replace(&[c(1)], &cs);
        assert_eq!(r.admitted, vec![c(1)]);
        assert!(r.evicted.is_empty());
    }

    #[test]
    fn low_score_candidate_changes_nothing() {
        let cs = sized(&[4, 4]);
        let mut st = CacheState::new(vec![10, 1], set(&[0]), 4, params());
        let r = st.cache_replace(&[c(1)], &cs);
        assert_eq!(r, Replacement::default());
        assert_eq!(st.resident(), &set(&[0]));
    }

    #[test]
    fn higher_score_displaces_minimum() {
        // sizes 4 and 4, t_base 100, t_transfer 10 -> score = f * 35
        let cs = sized(&[4, 4]);
        let mut st = CacheState::new(vec![100 / 35 + 1, 300 / 35 + 1], set(&[0]), 4, params());
        assert!(st.score(c(1), &cs) > st.score(c(0), &cs));
        let r = st.cache_replace(&[c(1)], &cs);
        assert_eq!(r.admitted, vec![c(1)]);
        assert_eq!(r.evicted, vec![c(0)]);
        assert_eq!(st.resident(), &set(&[1]));
    }

    #[test]
    fn scores_clamp_negative_counters() {
        let cs = sized(&[4]);
        let st = CacheState::new(vec![-7], BTreeSet::new(), 4, params());
        assert_eq!(st.score(c(0), &cs), 0.0);
    }

    #[test]
    fn budget_enforced_after_growth() {
        let mut cs = sized(&[2, 2]);
        let mut st = CacheState::new(vec![5, 1], set(&[0, 1]), 4, params());
        cs.push_member(c(1), e(4)).unwrap();
        let ev = st.enforce_budget(&cs);
        assert_eq!(ev, vec![c(1)]);
        assert!(st.used_entries(&cs) <= 4);
    }

    #[test]
    fn lru_evicts_stalest() {
        let cs = sized(&[2, 2, 2]);
        let mut lru = LruCache::new(4);
        assert_eq!(lru.access(&set(&[0]), &cs), 0);
        assert_eq!(lru.access(&set(&[1]), &cs), 0);
        assert_eq!(lru.access(&set(&[0]), &cs), 1);
        assert_eq!(lru.access(&set(&[2]), &cs), 0);
        assert_eq!(lru.resident(), &set(&[0, 2]));
    }
}
