//! Deterministic multi-device storage model and the per-step driver.
//!
//! A device serving `k` entries in one step costs
//! `t_base + max(k * entry_size / bandwidth, k / iops)`; devices run in
//! parallel, so a step costs as much as its slowest device.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::adaptation::{Adapter, AssignPolicy, CacheState, ClusterCache};
use crate::cluster::{ClusterId, ClusterSet};
use crate::placement::{
    build_dram_plan, place_clusters, place_contiguous, place_sequential, CacheScoreParams,
    DramPlan, PlacementMap,
};
use crate::scheduler::{
    merge_keep_duplicates, merge_with_bitmap, schedule_with, IoPlan, RoutePolicy,
};
use crate::trace::{ActivationStep, Distance, EntryId};
use crate::{Error, Result};

/// Sustained throughput limits of one device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceModel {
    /// Bytes per second.
    pub bandwidth: f64,
    /// Requests per second.
    pub iops_cap: f64,
    /// Addressing latency in microseconds.
    pub t_base: f64,
}

impl DeviceModel {
    /// Samsung PM9A3: 6.9 GB/s, 1.1M IOPS.
    pub fn pm9a3() -> Self {
        DeviceModel {
            bandwidth: 6.9e9,
            iops_cap: 1.1e6,
            t_base: 5.0,
        }
    }

    /// Intel Optane 900P: 2.5 GB/s, 0.55M IOPS.
    pub fn optane_900p() -> Self {
        DeviceModel {
            bandwidth: 2.5e9,
            iops_cap: 0.55e6,
            t_base: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.bandwidth) && ok(self.iops_cap) && ok(self.t_base) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "device bandwidth, iops and t_base must be positive",
            ))
        }
    }

    /// Transfer cost of `k` entries, microseconds, without addressing.
    pub fn transfer_us(&self, k: usize, entry_size: u64) -> f64 {
        let k = k as f64;
        let by_bw = k * entry_size as f64 / self.bandwidth;
        let by_iops = k / self.iops_cap;
        by_bw.max(by_iops) * 1e6
    }

    /// Score parameters for the hot-cluster cache.
    pub fn score_params(&self, entry_size: u64) -> CacheScoreParams {
        CacheScoreParams {
            t_base: self.t_base,
            t_transfer: self.transfer_us(1, entry_size),
        }
    }
}

/// How often `t_base` is paid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Addressing {
    /// Once per device per step (one batched submission).
    #[default]
    PerStep,
    /// Once per entry.
    PerEntry,
}

/// Retrieval strategy under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Mode {
    /// Striped placement, deduplicated merge, load-aware routing.
    #[default]
    Swarm,
    /// Clusters packed device after device; deduplicated, first replica.
    NoBalance,
    /// Striped placement; first replica, duplicates kept.
    Static,
    /// Striped placement; load-aware routing, duplicates kept.
    NoDedup,
    /// Sequential placement. Every step scans all offloaded entries to score
    /// them, then fetches the activated ones.
    NoCluster,
}

impl Mode {
    pub const ALL: [Mode; 5] = [
        Mode::Swarm,
        Mode::NoBalance,
        Mode::Static,
        Mode::NoDedup,
        Mode::NoCluster,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Swarm => "swarm",
            Mode::NoBalance => "no_balance",
            Mode::Static => "static",
            Mode::NoDedup => "no_dedup",
            Mode::NoCluster => "no_cluster",
        }
    }

    fn dedup(self) -> bool {
        matches!(self, Mode::Swarm | Mode::NoBalance)
    }

    fn route(self) -> RoutePolicy {
        match self {
            Mode::Swarm | Mode::NoDedup | Mode::NoCluster => RoutePolicy::Balanced,
            Mode::NoBalance | Mode::Static => RoutePolicy::FirstReplica,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or(Error::InvalidParameter("unknown mode"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_disk: u32,
    pub device: DeviceModel,
    /// Bytes per KV entry.
    pub entry_size: u64,
    pub mode: Mode,
    pub addressing: Addressing,
}

impl SimConfig {
    pub fn new(n_disk: u32, device: DeviceModel, entry_size: u64, mode: Mode) -> Self {
        SimConfig {
            n_disk,
            device,
            entry_size,
            mode,
            addressing: Addressing::PerStep,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_disk == 0 {
            return Err(Error::NoDevices);
        }
        if self.entry_size == 0 {
            return Err(Error::InvalidParameter("entry_size must be positive"));
        }
        self.device.validate()
    }

    /// Time for one device serving `k` entries in one step.
    pub fn device_time_us(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let addressing = match self.addressing {
            Addressing::PerStep => self.device.t_base,
            Addressing::PerEntry => self.device.t_base * k as f64,
        };
        addressing + self.device.transfer_us(k, self.entry_size)
    }

    /// `t_base + ceil(n / n_disk) * per-entry cost`: no policy can beat it.
    pub fn lower_bound_us(&self, n_entries: usize) -> f64 {
        let per_device = n_entries.div_ceil(self.n_disk as usize);
        self.device_time_us(per_device)
    }
}

/// Bytes per KV entry for a model: BF16 keys and values of one token in one
/// layer.
pub fn entry_size_for_hidden(hidden_dim: u64) -> u64 {
    2 * hidden_dim * 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub io_time_us: f64,
    pub io_volume_bytes: u64,
    pub per_device_entries: Vec<usize>,
    /// Activated clusters already resident in the hot cache.
    pub cache_hits: usize,
    /// Activated clusters this step.
    pub cluster_accesses: usize,
    /// Bytes per second; zero for an idle step.
    pub effective_bandwidth: f64,
    /// Distinct entries fetched (the deduplicated request size).
    pub unique_entries: usize,
}

impl StepMetrics {
    pub fn max_device_entries(&self) -> usize {
        self.per_device_entries.iter().copied().max().unwrap_or(0)
    }

    pub fn min_device_entries(&self) -> usize {
        self.per_device_entries.iter().copied().min().unwrap_or(0)
    }
}

/// Converts one plan into time, volume and bandwidth.
pub fn simulate_step(plan: &IoPlan, cfg: &SimConfig) -> Result<StepMetrics> {
    if plan.buckets.len() != cfg.n_disk as usize {
        return Err(Error::DimensionMismatch("plan buckets vs n_disk"));
    }
    let per_device_entries = plan.bucket_sizes();
    let io_time_us = per_device_entries
        .iter()
        .map(|&k| cfg.device_time_us(k))
        .fold(0.0, f64::max);
    let total: usize = per_device_entries.iter().sum();
    let io_volume_bytes = total as u64 * cfg.entry_size;
    let unique: BTreeSet<EntryId> = plan.buckets.iter().flatten().copied().collect();
    Ok(StepMetrics {
        step: 0,
        io_time_us,
        io_volume_bytes,
        per_device_entries,
        cache_hits: 0,
        cluster_accesses: 0,
        effective_bandwidth: bandwidth(io_volume_bytes, io_time_us),
        unique_entries: unique.len(),
    })
}

fn bandwidth(bytes: u64, time_us: f64) -> f64 {
    if time_us > 0.0 {
        bytes as f64 / (time_us * 1e-6)
    } else {
        0.0
    }
}

/// How the runtime decides which clusters a step activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Clusters containing any activated entry.
    #[default]
    Oracle,
    /// Clusters whose medoid is activated.
    Medoid,
}

impl Selection {
    pub fn name(self) -> &'static str {
        match self {
            Selection::Oracle => "oracle",
            Selection::Medoid => "medoid",
        }
    }
}

impl FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Selection::Oracle),
            "medoid" => Ok(Selection::Medoid),
            _ => Err(Error::InvalidParameter("unknown selection")),
        }
    }
}

/// Runtime policies around the storage model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policies {
    pub selection: Selection,
    /// Most recent entries kept in DRAM.
    pub window: usize,
    /// Hot-cluster cache budget in entries.
    pub cache_budget_entries: usize,
    /// Frequency feedback and replacement; off keeps the initial hot set.
    pub adaptive_cache: bool,
    pub assign: AssignPolicy,
    /// Steps a new entry is observed before assignment.
    pub adapt_window: u32,
}

impl Default for Policies {
    fn default() -> Self {
        Policies {
            selection: Selection::Oracle,
            window: 64,
            cache_budget_entries: 0,
            adaptive_cache: true,
            assign: AssignPolicy::Coactivation { tau: 0.5 },
            adapt_window: 16,
        }
    }
}

/// Clusters touched by `activated` under `selection`.
pub fn select_clusters(
    activated: &[EntryId],
    cs: &ClusterSet,
    medoid_of: &[Vec<ClusterId>],
    selection: Selection,
) -> BTreeSet<ClusterId> {
    let mut out = BTreeSet::new();
    for e in activated {
        match selection {
            Selection::Oracle => out.extend(cs.clusters_of(*e).iter().copied()),
            Selection::Medoid => {
                if let Some(cs) = medoid_of.get(e.index()) {
                    out.extend(cs.iter().copied());
                }
            }
        }
    }
    out
}

/// Per-cluster activation counts over profiling steps (oracle selection).
pub fn profile_frequencies(cs: &ClusterSet, steps: &[ActivationStep]) -> Vec<i64> {
    let mut freq = vec![0i64; cs.len()];
    for s in steps {
        for c in select_clusters(s.activated(), cs, &[], Selection::Oracle) {
            freq[c.index()] += 1;
        }
    }
    freq
}

/// Placement for `mode`.
pub fn placement_for(mode: Mode, cs: &ClusterSet, n_disk: u32) -> Result<PlacementMap> {
    match mode {
        Mode::Swarm | Mode::Static | Mode::NoDedup => place_clusters(cs, n_disk),
        Mode::NoBalance => place_contiguous(cs, n_disk),
        Mode::NoCluster => place_sequential(cs.n_entries(), n_disk),
    }
}

/// DRAM plan for `mode`; the no-cluster baseline only keeps its window.
pub fn dram_for(
    mode: Mode,
    cs: &ClusterSet,
    pm: &PlacementMap,
    freqs: &[i64],
    pol: &Policies,
    p: CacheScoreParams,
) -> DramPlan {
    let mut plan = build_dram_plan(cs, pm, freqs, pol.window, pol.cache_budget_entries, p);
    if mode == Mode::NoCluster {
        plan.medoid_index.clear();
        plan.hot_cache.clear();
        plan.cache_budget_entries = 0;
    }
    plan
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub steps: usize,
    pub mean_io_time_us: f64,
    pub p50_io_time_us: f64,
    pub p99_io_time_us: f64,
    pub max_io_time_us: f64,
    pub total_io_time_us: f64,
    pub total_io_volume_bytes: u64,
    /// Total volume over total time.
    pub effective_bandwidth: f64,
    /// Mean of per-step bandwidths over steps that moved data.
    pub mean_effective_bandwidth: f64,
    pub cache_hits: usize,
    pub cluster_accesses: usize,
    pub cache_hit_rate: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = libm::ceil(p / 100.0 * sorted.len() as f64).max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

pub fn summarize(metrics: &[StepMetrics]) -> RunSummary {
    if metrics.is_empty() {
        return RunSummary::default();
    }
    let mut times: Vec<f64> = metrics.iter().map(|m| m.io_time_us).collect();
    times.sort_by(f64::total_cmp);
    let total_time: f64 = times.iter().sum();
    let total_volume: u64 = metrics.iter().map(|m| m.io_volume_bytes).sum();
    let busy: Vec<f64> = metrics
        .iter()
        .filter(|m| m.io_time_us > 0.0)
        .map(|m| m.effective_bandwidth)
        .collect();
    let hits: usize = metrics.iter().map(|m| m.cache_hits).sum();
    let accesses: usize = metrics.iter().map(|m| m.cluster_accesses).sum();
    RunSummary {
        steps: metrics.len(),
        mean_io_time_us: total_time / metrics.len() as f64,
        p50_io_time_us: percentile(&times, 50.0),
        p99_io_time_us: percentile(&times, 99.0),
        max_io_time_us: *times.last().expect("non-empty"),
        total_io_time_us: total_time,
        total_io_volume_bytes: total_volume,
        effective_bandwidth: bandwidth(total_volume, total_time),
        mean_effective_bandwidth: if busy.is_empty() {
            0.0
        } else {
            busy.iter().sum::<f64>() / busy.len() as f64
        },
        cache_hits: hits,
        cluster_accesses: accesses,
        cache_hit_rate: if accesses == 0 {
            0.0
        } else {
            hits as f64 / accesses as f64
        },
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub steps: Vec<StepMetrics>,
    pub summary: RunSummary,
    /// Clusters after online assignment.
    pub clusters: ClusterSet,
    pub placement: PlacementMap,
    /// New entries assigned during the run.
    pub assigned: usize,
}

fn medoid_lookup(cs: &ClusterSet) -> Vec<Vec<ClusterId>> {
    let mut out = vec![Vec::new(); cs.n_entries()];
    for c in cs.clusters() {
        out[c.medoid.index()].push(c.id);
    }
    out
}

/// Drives the online loop over `steps`: select clusters, merge, schedule,
/// simulate, feed the cache, and assign matured new entries.
///
/// `offline` is only read by the min-diff assignment baseline.
#[allow(clippy::too_many_arguments)]
pub fn run_workload<D: Distance + ?Sized>(
    steps: &[ActivationStep],
    mut cs: ClusterSet,
    mut pm: PlacementMap,
    mut dram: DramPlan,
    freqs: Vec<i64>,
    cfg: &SimConfig,
    pol: &Policies,
    offline: &D,
) -> Result<RunOutput> {
    cfg.validate()?;
    if pm.n_disk() != cfg.n_disk {
        return Err(Error::DimensionMismatch("placement n_disk vs config"));
    }
    if freqs.len() > cs.len() {
        return Err(Error::DimensionMismatch("frequency table vs clusters"));
    }
    let score = cfg.device.score_params(cfg.entry_size);
    let mut cache = CacheState::new(
        freqs,
        dram.hot_cache.clone(),
        dram.cache_budget_entries,
        score,
    );
    let mut adapter = Adapter::new(pol.adapt_window, pol.assign);
    let mut medoid_of = medoid_lookup(&cs);
    let mut out = Vec::with_capacity(steps.len());
    let mut assigned = 0usize;
    let clustered = cfg.mode != Mode::NoCluster;

    for (idx, step) in steps.iter().enumerate() {
        for &e in step.new_entries() {
            cs.ensure_entry(e);
            dram.slide_window(e);
            if !clustered {
                pm.append_sequential(e);
            }
        }
        let n = cs.n_entries();
        for &e in step.activated() {
            if e.index() >= n {
                return Err(Error::UnknownEntry(e.0));
            }
        }

        let mut resident = dram.resident_bitmap(&cs, n);
        for e in adapter.stats().pending() {
            resident[e.index()] = true;
        }

        let (plan, activated) = if clustered {
            let activated = select_clusters(step.activated(), &cs, &medoid_of, pol.selection);
            let items = if cfg.mode.dedup() {
                merge_with_bitmap(&activated, &resident, &cs)?
            } else {
                merge_keep_duplicates(&activated, &resident, &cs)?
            };
            (schedule_with(&items, &pm, cfg.mode.route())?, activated)
        } else {
            let scan = (0..n as u32)
                .map(EntryId)
                .filter(|e| !resident[e.index()] && !pm.replicas(*e).is_empty());
            let fetch = step
                .activated()
                .iter()
                .copied()
                .filter(|e| !resident[e.index()]);
            let items: Vec<EntryId> = scan.chain(fetch).collect();
            (
                schedule_with(&items, &pm, RoutePolicy::FirstReplica)?,
                BTreeSet::new(),
            )
        };

        let mut m = simulate_step(&plan, cfg)?;
        m.step = idx;
        m.cluster_accesses = activated.len();
        m.cache_hits = activated.intersection(&dram.hot_cache).count();
        out.push(m);

        if clustered {
            if pol.adaptive_cache {
                cache.access(&activated, &cs);
                dram.hot_cache = cache.resident().clone();
            }
            let matured = adapter.step(step, &mut cs, &mut pm, offline)?;
            assigned += matured.len();
            if matured.iter().any(|a| a.new_cluster.is_some()) {
                medoid_of = medoid_lookup(&cs);
                dram.medoid_index = cs
                    .clusters()
                    .iter()
                    .map(|c| (c.medoid, pm.cluster_start(c.id).unwrap_or(0)))
                    .collect();
            } else if medoid_of.len() < cs.n_entries() {
                medoid_of.resize(cs.n_entries(), Vec::new());
            }
            if pol.adaptive_cache {
                cache.enforce_budget(&cs);
                dram.hot_cache = cache.resident().clone();
            }
        }
    }

    Ok(RunOutput {
        summary: summarize(&out),
        steps: out,
        clusters: cs,
        placement: pm,
        assigned,
    })
}

/// Sets up placement, frequencies and DRAM for `cfg.mode` from offline
/// clusters and profiling steps, then runs `online`.
pub fn run_mode<D: Distance + ?Sized>(
    cs: &ClusterSet,
    profile: &[ActivationStep],
    online: &[ActivationStep],
    cfg: &SimConfig,
    pol: &Policies,
    offline: &D,
) -> Result<RunOutput> {
    cfg.validate()?;
    let pm = placement_for(cfg.mode, cs, cfg.n_disk)?;
    let freqs = profile_frequencies(cs, profile);
    let score = cfg.device.score_params(cfg.entry_size);
    let dram = dram_for(cfg.mode, cs, &pm, &freqs, pol, score);
    run_workload(online, cs.clone(), pm, dram, freqs, cfg, pol, offline)
}
