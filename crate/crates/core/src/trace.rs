//! Activation traces and the co-activation structures derived from them.
//!
//! A trace is a sequence of decoding steps, each naming the KV entries that
//! sparse attention selected. Pair counts over those sets give the adjacency
//! matrix; normalising the counts gives a co-activation probability and
//! `1 - P` is the distance used by clustering.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::{Error, Result};

/// One KV entry (token position) within a single layer's cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct EntryId(pub u32);

impl EntryId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for EntryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<u32> for EntryId {
    fn from(v: u32) -> Self {
        EntryId(v)
    }
}

/// Entries selected at one decoding step, plus the entries this step appended.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ActivationStep {
    activated: Vec<EntryId>,
    new_entries: Vec<EntryId>,
}

impl ActivationStep {
    /// Activation is a set-membership event: duplicates collapse and the
    /// stored order is ascending.
    pub fn new(
        activated: impl IntoIterator<Item = EntryId>,
        new_entries: impl IntoIterator<Item = EntryId>,
    ) -> Self {
        let mut activated: Vec<EntryId> = activated.into_iter().collect();
        activated.sort_unstable();
        activated.dedup();
        ActivationStep {
            activated,
            new_entries: new_entries.into_iter().collect(),
        }
    }

    pub fn activated(&self) -> &[EntryId] {
        &self.activated
    }

    pub fn new_entries(&self) -> &[EntryId] {
        &self.new_entries
    }

    pub fn is_activated(&self, e: EntryId) -> bool {
        self.activated.binary_search(&e).is_ok()
    }
}

/// An ordered list of steps over a cache that starts with `initial_entries`
/// entries and grows by the `new_entries` of each step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationTrace {
    initial_entries: u32,
    steps: Vec<ActivationStep>,
}

impl ActivationTrace {
    pub fn new(initial_entries: u32, steps: Vec<ActivationStep>) -> Result<Self> {
        if initial_entries == 0 {
            return Err(Error::EmptyTrace);
        }
        let mut count = initial_entries;
        for (idx, step) in steps.iter().enumerate() {
            for &e in &step.new_entries {
                if e.0 != count {
                    return Err(Error::NonConsecutiveNewEntry {
                        step: idx,
                        expected: count,
                        got: e.0,
                    });
                }
                count += 1;
            }
            if let Some(&last) = step.activated.last() {
                if last.0 >= count {
                    return Err(Error::EntryOutOfRange {
                        step: idx,
                        entry: last.0,
                        count,
                    });
                }
            }
        }
        Ok(ActivationTrace {
            initial_entries,
            steps,
        })
    }

    /// Entry count declared before the first step.
    pub fn initial_entries(&self) -> u32 {
        self.initial_entries
    }

    /// Entry count after every step's new entries have been appended.
    pub fn entry_count(&self) -> u32 {
        self.initial_entries
            + self
                .steps
                .iter()
                .map(|s| s.new_entries.len() as u32)
                .sum::<u32>()
    }

    pub fn steps(&self) -> &[ActivationStep] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Number of leading steps that append nothing: the profiling portion.
    pub fn profiling_len(&self) -> usize {
        self.steps
            .iter()
            .position(|s| !s.new_entries.is_empty())
            .unwrap_or(self.steps.len())
    }

    /// The first `n` steps as a trace of their own.
    pub fn prefix(&self, n: usize) -> ActivationTrace {
        ActivationTrace {
            initial_entries: self.initial_entries,
            steps: self.steps[..n.min(self.steps.len())].to_vec(),
        }
    }
}

/// Matrices up to this many entries keep a dense upper triangle; larger ones
/// switch to a pair map. Both answer identically.
pub const DENSE_LIMIT: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
enum PairCounts {
    Dense(Vec<u32>),
    Sparse(BTreeMap<(u32, u32), u32>),
}

/// Symmetric co-activation counts `f(e_i, e_j)` with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    counts: PairCounts,
}

#[inline]
fn tri_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        let counts = if n <= DENSE_LIMIT {
            PairCounts::Dense(vec![0; n * n.saturating_sub(1) / 2])
        } else {
            PairCounts::Sparse(BTreeMap::new())
        };
        AdjacencyMatrix { n, counts }
    }

    /// Forces the pair-map representation regardless of size.
    pub fn zeros_sparse(n: usize) -> Self {
        AdjacencyMatrix {
            n,
            counts: PairCounts::Sparse(BTreeMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.counts, PairCounts::Dense(_))
    }

    pub fn count(&self, i: EntryId, j: EntryId) -> u32 {
        let (a, b) = (i.index(), j.index());
        if a == b || a >= self.n || b >= self.n {
            return 0;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        match &self.counts {
            PairCounts::Dense(v) => v[tri_index(self.n, lo, hi)],
            PairCounts::Sparse(m) => m.get(&(lo as u32, hi as u32)).copied().unwrap_or(0),
        }
    }

    /// Adds one co-activation of the unordered pair; the diagonal is ignored.
    pub fn increment(&mut self, i: EntryId, j: EntryId) {
        let (a, b) = (i.index(), j.index());
        if a == b {
            return;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        match &mut self.counts {
            PairCounts::Dense(v) => v[tri_index(self.n, lo, hi)] += 1,
            PairCounts::Sparse(m) => *m.entry((lo as u32, hi as u32)).or_insert(0) += 1,
        }
    }

    /// Adds every pair of an ascending, duplicate-free set.
    pub fn add_step(&mut self, activated: &[EntryId]) {
        for (k, &a) in activated.iter().enumerate() {
            for &b in &activated[k + 1..] {
                self.increment(a, b);
            }
        }
    }

    /// Sum over all ordered pairs `(k, l)`, i.e. twice the unordered sum.
    pub fn total(&self) -> u64 {
        let half: u64 = match &self.counts {
            PairCounts::Dense(v) => v.iter().map(|&c| c as u64).sum(),
            PairCounts::Sparse(m) => m.values().map(|&c| c as u64).sum(),
        };
        2 * half
    }

    pub fn max_count(&self) -> u32 {
        match &self.counts {
            PairCounts::Dense(v) => v.iter().copied().max().unwrap_or(0),
            PairCounts::Sparse(m) => m.values().copied().max().unwrap_or(0),
        }
    }

    /// Non-zero pairs `(i, j, count)` with `i < j`, in ascending order.
    pub fn nonzero_pairs(&self) -> Vec<(EntryId, EntryId, u32)> {
        let mut out = Vec::new();
        match &self.counts {
            PairCounts::Dense(v) => {
                for i in 0..self.n {
                    for j in i + 1..self.n {
                        let c = v[tri_index(self.n, i, j)];
                        if c > 0 {
                            out.push((EntryId(i as u32), EntryId(j as u32), c));
                        }
                    }
                }
            }
            PairCounts::Sparse(m) => {
                for (&(i, j), &c) in m {
                    if c > 0 {
                        out.push((EntryId(i), EntryId(j), c));
                    }
                }
            }
        }
        out
    }
}

/// Counts, for every pair of entries, the steps activating both.
pub fn build_adjacency(trace: &ActivationTrace) -> Result<AdjacencyMatrix> {
    let n = trace.entry_count() as usize;
    if n == 0 {
        return Err(Error::EmptyTrace);
    }
    let mut adj = AdjacencyMatrix::zeros(n);
    for step in trace.steps() {
        adj.add_step(step.activated());
    }
    Ok(adj)
}

/// How raw pair counts become probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// `f(i,j) / sum_{k,l} f(k,l)` over ordered pairs.
    #[default]
    Global,
    /// `f(i,j) / max_{k,l} f(k,l)`. Not part of the published method; keeps
    /// distances spread out on small traces.
    MaxPair,
}

impl Normalization {
    pub fn denominator(self, adj: &AdjacencyMatrix) -> u64 {
        match self {
            Normalization::Global => adj.total(),
            Normalization::MaxPair => adj.max_count() as u64,
        }
    }
}

/// Co-activation probability of `i` and `j` under the global normalisation.
pub fn coactivation_probability(adj: &AdjacencyMatrix, i: EntryId, j: EntryId) -> Result<f64> {
    probability_with(adj, Normalization::Global, i, j)
}

pub fn probability_with(
    adj: &AdjacencyMatrix,
    norm: Normalization,
    i: EntryId,
    j: EntryId,
) -> Result<f64> {
    let denom = norm.denominator(adj);
    if denom == 0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(adj.count(i, j) as f64 / denom as f64)
}

/// Anything that can answer a pairwise distance between entries.
pub trait Distance {
    /// Number of entries covered; valid ids are `0..len()`.
    fn len(&self) -> usize;

    fn distance(&self, a: EntryId, b: EntryId) -> f64;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
enum DistanceRepr {
    /// Upper triangle, row-major.
    Explicit(Vec<f64>),
    Derived {
        adj: AdjacencyMatrix,
        denom: f64,
    },
}

/// Symmetric distances in `[0, 1]` with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    repr: DistanceRepr,
}

impl DistanceMatrix {
    /// Builds an explicit matrix from `f(i, j)` evaluated for `i < j`.
    /// Values are clamped to `[0, 1]`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut tri = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                tri.push(f(i, j).clamp(0.0, 1.0));
            }
        }
        DistanceMatrix {
            n,
            repr: DistanceRepr::Explicit(tri),
        }
    }

    /// Every off-diagonal pair at the same distance.
    pub fn uniform(n: usize, d: f64) -> Self {
        Self::from_fn(n, |_, _| d)
    }

    /// The underlying counts when the matrix was derived from a trace.
    pub fn adjacency(&self) -> Option<&AdjacencyMatrix> {
        match &self.repr {
            DistanceRepr::Derived { adj, .. } => Some(adj),
            DistanceRepr::Explicit(_) => None,
        }
    }

    /// Radius that admits exactly the pairs co-activated at least
    /// `min_count` times. Only meaningful for derived matrices.
    pub fn radius_for_count(&self, min_count: u32) -> Option<f64> {
        match &self.repr {
            DistanceRepr::Derived { denom, .. } => Some(1.0 - min_count as f64 / *denom),
            DistanceRepr::Explicit(_) => None,
        }
    }

    /// Radius admitting pairs whose count reaches `fraction` of the largest
    /// pair count. A calibration aid for the global normalisation, whose raw
    /// radii sit very close to 1 on long traces.
    pub fn radius_for_fraction(&self, fraction: f64) -> Option<f64> {
        let adj = self.adjacency()?;
        let min_count = libm::ceil(fraction * adj.max_count() as f64).max(1.0) as u32;
        self.radius_for_count(min_count)
    }
}

impl Distance for DistanceMatrix {
    fn len(&self) -> usize {
        self.n
    }

    fn distance(&self, a: EntryId, b: EntryId) -> f64 {
        let (i, j) = (a.index(), b.index());
        if i == j {
            return 0.0;
        }
        match &self.repr {
            DistanceRepr::Explicit(tri) => {
                let (lo, hi) = if i < j { (i, j) } else { (j, i) };
                tri[tri_index(self.n, lo, hi)]
            }
            DistanceRepr::Derived { adj, denom } => 1.0 - adj.count(a, b) as f64 / *denom,
        }
    }
}

/// `d(i, j) = 1 - P(i, j)` for every pair, with the global normalisation.
pub fn build_distance_matrix(adj: AdjacencyMatrix) -> Result<DistanceMatrix> {
    build_distance_matrix_with(adj, Normalization::Global)
}

pub fn build_distance_matrix_with(
    adj: AdjacencyMatrix,
    norm: Normalization,
) -> Result<DistanceMatrix> {
    let denom = norm.denominator(&adj);
    if denom == 0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(DistanceMatrix {
        n: adj.len(),
        repr: DistanceRepr::Derived {
            adj,
            denom: denom as f64,
        },
    })
}

/// `1 - f(i,j) / min(act(i), act(j))`: one minus the overlap coefficient of
/// the two entries' activation histories.
///
/// Unlike [`DistanceMatrix`], this stays comparable between long-lived
/// entries and entries appended late in a trace, which makes it the
/// reference metric when tracking cluster quality during decoding.
#[derive(Debug, Clone)]
pub struct OverlapDistance {
    adj: AdjacencyMatrix,
    activations: Vec<u32>,
}

impl OverlapDistance {
    pub fn from_trace(trace: &ActivationTrace) -> Result<Self> {
        let adj = build_adjacency(trace)?;
        let mut activations = vec![0u32; adj.len()];
        for step in trace.steps() {
            for e in step.activated() {
                activations[e.index()] += 1;
            }
        }
        Ok(OverlapDistance { adj, activations })
    }
}

impl Distance for OverlapDistance {
    fn len(&self) -> usize {
        self.adj.len()
    }

    fn distance(&self, a: EntryId, b: EntryId) -> f64 {
        if a == b {
            return 0.0;
        }
        let m = self.activations[a.index()].min(self.activations[b.index()]);
        if m == 0 {
            return 1.0;
        }
        1.0 - self.adj.count(a, b) as f64 / m as f64
    }
}
