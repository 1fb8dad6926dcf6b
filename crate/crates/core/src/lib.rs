//! Co-activation aware KV-cache offloading across multiple storage devices.
//!
//! The crate covers the whole offline/online pipeline without touching real
//! hardware:
//!
//! * [`trace`]: activation traces, co-activation counts and the distance
//!   matrix derived from them.
//! * [`cluster`]: density-ordered medoid selection and greedy cluster
//!   expansion with replication of shared entries.
//! * [`placement`]: wrap-around striping of clusters over devices plus the
//!   DRAM plan (medoid index, local window, hot-cluster cache).
//! * [`scheduler`]: deduplicating merge of activated clusters and
//!   replica-aware bucket scheduling.
//! * [`adaptation`]: windowed assignment of newly decoded entries and
//!   frequency-driven cache replacement.
//! * [`sim`]: a deterministic per-step storage model and the workload driver.
//! * [`workload`]: synthetic traces with planted co-activation groups.
//!
//! Everything here is `no_std` + `alloc`; file formats and the CLI live in
//! the `kvswarm` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod adaptation;
pub mod cluster;
mod error;
pub mod placement;
pub mod scheduler;
pub mod sim;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};

pub use adaptation::{AssignPolicy, CacheState, ClusterCache, LruCache, WindowStats};
pub use cluster::{build_clusters, Cluster, ClusterId, ClusterParams, ClusterSet};
pub use placement::{CacheScoreParams, DeviceSlot, DramPlan, PlacementMap};
pub use scheduler::{IoPlan, RetrievalRequest, RoutePolicy};
pub use sim::{DeviceModel, Mode, SimConfig, StepMetrics};
pub use trace::{
    ActivationStep, ActivationTrace, AdjacencyMatrix, Distance, DistanceMatrix, EntryId,
    Normalization,
};
pub use workload::{PlantedSpec, PlantedWorkload, Popularity};
