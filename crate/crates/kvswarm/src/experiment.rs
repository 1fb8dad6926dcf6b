//! Offline preparation and multi-run simulation driven by a [`RunConfig`].

use kvswarm_core::cluster::{build_clusters, mean_quality, ClusterParams, ClusterSet};
use kvswarm_core::placement::{place_clusters, DramPlan, PlacementMap};
use kvswarm_core::sim::{
    dram_for, profile_frequencies, run_mode, Mode, Policies, RunOutput, SimConfig,
};
use kvswarm_core::trace::{build_adjacency, build_distance_matrix_with, DistanceMatrix};
use kvswarm_core::workload::generate;
use kvswarm_core::{ActivationTrace, EntryId};
use rayon::prelude::*;

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(
        "{0}; generate more steps or a higher sparsity so that steps activate at least two entries"
    )]
    NoCoactivation(kvswarm_core::Error),
    #[error("{0}")]
    Core(kvswarm_core::Error),
    #[error("clusters cover {clusters} entries but the trace starts with {trace}")]
    Mismatch { clusters: usize, trace: usize },
    #[error("{0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

impl From<kvswarm_core::Error> for RunError {
    fn from(e: kvswarm_core::Error) -> Self {
        match e {
            kvswarm_core::Error::ZeroDenominator => RunError::NoCoactivation(e),
            other => RunError::Core(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, RunError>;

/// Leading steps used for profiling: a fraction of the trace, never past
/// the first decode step.
pub fn profile_len(cfg: &RunConfig, trace: &ActivationTrace) -> usize {
    let want = (cfg.profile_fraction * trace.len() as f64).round() as usize;
    want.max(1).min(trace.profiling_len())
}

/// Distance matrix and radius for a trace.
pub struct Offline {
    pub profile_len: usize,
    pub dist: DistanceMatrix,
    pub tau: f64,
}

pub fn offline(cfg: &RunConfig, trace: &ActivationTrace) -> Result<Offline> {
    let profile_len = profile_len(cfg, trace);
    let adj = build_adjacency(&trace.prefix(profile_len))?;
    let dist = build_distance_matrix_with(adj, cfg.normalization)?;
    let tau = match cfg.tau {
        Some(t) => t,
        None => dist
            .radius_for_fraction(cfg.calibrate)
            .ok_or(kvswarm_core::Error::InvalidParameter("radius calibration"))?,
    };
    Ok(Offline {
        profile_len,
        dist,
        tau,
    })
}

pub fn cluster(cfg: &RunConfig, trace: &ActivationTrace, off: &Offline) -> Result<ClusterSet> {
    let entries: Vec<EntryId> = (0..trace.initial_entries()).map(EntryId).collect();
    let params = ClusterParams {
        tau: off.tau,
        max_replicas: (cfg.max_replicas > 0).then_some(cfg.max_replicas),
    };
    Ok(build_clusters(&entries, &off.dist, params)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub clusters: usize,
    pub entries: usize,
    pub tau: f64,
    pub mean_size: f64,
    pub max_size: usize,
    pub replicated_entries: usize,
    pub max_replication: usize,
    pub mean_quality: f64,
}

pub fn cluster_stats(cs: &ClusterSet, off: &Offline) -> ClusterStats {
    let sizes: Vec<usize> = cs.clusters().iter().map(|c| c.len()).collect();
    ClusterStats {
        clusters: cs.len(),
        entries: cs.n_entries(),
        tau: cs.tau(),
        mean_size: if sizes.is_empty() {
            0.0
        } else {
            cs.total_members() as f64 / sizes.len() as f64
        },
        max_size: sizes.iter().copied().max().unwrap_or(0),
        replicated_entries: cs.replication().iter().filter(|r| r.len() > 1).count(),
        max_replication: cs.max_replication(),
        mean_quality: mean_quality(cs, &off.dist),
    }
}

pub fn cache_budget(cfg: &RunConfig, cs: &ClusterSet) -> usize {
    (cfg.cache_ratio * cs.n_entries() as f64).round() as usize
}

pub fn policies(cfg: &RunConfig, cs: &ClusterSet) -> Policies {
    Policies {
        selection: cfg.selection,
        window: cfg.window,
        cache_budget_entries: cache_budget(cfg, cs),
        adaptive_cache: cfg.adaptive_cache,
        assign: cfg.assign_policy(),
        adapt_window: cfg.adapt_window,
    }
}

pub fn sim_config(cfg: &RunConfig, n_disk: u32, mode: Mode) -> SimConfig {
    let mut s = SimConfig::new(n_disk, cfg.device_model(), cfg.entry_bytes(), mode);
    s.addressing = cfg.addressing;
    s
}

/// Striped placement and initial DRAM plan for the first device count.
pub fn place(
    cfg: &RunConfig,
    trace: &ActivationTrace,
    cs: &ClusterSet,
    off: &Offline,
) -> Result<(PlacementMap, DramPlan)> {
    let n_disk = cfg.disks.0[0];
    let pm = place_clusters(cs, n_disk)?;
    let freqs = profile_frequencies(cs, &trace.steps()[..off.profile_len]);
    let sc = sim_config(cfg, n_disk, Mode::Swarm);
    let dram = dram_for(
        Mode::Swarm,
        cs,
        &pm,
        &freqs,
        &policies(cfg, cs),
        sc.device.score_params(sc.entry_size),
    );
    Ok((pm, dram))
}

/// One prepared workload: a trace with its offline clusters.
pub struct Workload {
    pub sparsity: Option<f64>,
    pub trace: ActivationTrace,
    pub offline: Offline,
    pub clusters: ClusterSet,
}

impl Workload {
    pub fn prepare(
        cfg: &RunConfig,
        sparsity: Option<f64>,
        trace: ActivationTrace,
        clusters: Option<ClusterSet>,
    ) -> Result<Self> {
        let off = offline(cfg, &trace)?;
        let cs = match clusters {
            Some(cs) => {
                if cs.n_entries() != trace.initial_entries() as usize {
                    return Err(RunError::Mismatch {
                        clusters: cs.n_entries(),
                        trace: trace.initial_entries() as usize,
                    });
                }
                cs
            }
            None => cluster(cfg, &trace, &off)?,
        };
        Ok(Workload {
            sparsity,
            trace,
            offline: off,
            clusters: cs,
        })
    }

    /// Generates the planted workload for each configured sparsity.
    pub fn generated(cfg: &RunConfig) -> Result<Vec<Workload>> {
        cfg.sparsity
            .0
            .par_iter()
            .map(|&s| {
                let w = generate(&cfg.planted_spec(s))?;
                Workload::prepare(cfg, Some(s), w.trace, None)
            })
            .collect()
    }
}

pub struct Point {
    pub sparsity: Option<f64>,
    pub disks: u32,
    pub mode: Mode,
    pub output: RunOutput,
}

/// Every (workload, device count, mode) combination, in config order.
pub fn run_all(cfg: &RunConfig, workloads: &[Workload]) -> Result<Vec<Point>> {
    let mut jobs = Vec::new();
    for w in 0..workloads.len() {
        for &d in &cfg.disks.0 {
            for &m in &cfg.modes {
                jobs.push((w, d, m));
            }
        }
    }
    let run = |&(w, d, m): &(usize, u32, Mode)| -> Result<Point> {
        let wl = &workloads[w];
        let steps = wl.trace.steps();
        let p = wl.offline.profile_len;
        let output = run_mode(
            &wl.clusters,
            &steps[..p],
            &steps[p..],
            &sim_config(cfg, d, m),
            &policies(cfg, &wl.clusters),
            &wl.offline.dist,
        )?;
        Ok(Point {
            sparsity: wl.sparsity,
            disks: d,
            mode: m,
            output,
        })
    };
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()?;
        pool.install(|| jobs.par_iter().map(run).collect())
    } else {
        jobs.par_iter().map(run).collect()
    }
}
