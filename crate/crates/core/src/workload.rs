//! Synthetic activation traces with planted co-activation groups.
//!
//! Entries are split into `n_groups` consecutive blocks. With overlap `o`,
//! the first `round(o * |block g+1|)` entries of block `g+1` also belong to
//! group `g`, so neighbouring groups share boundary entries. Each step picks
//! groups by popularity (without replacement) and activates their members
//! until `round(sparsity * entries)` is reached, truncating the last group.
//! Each activated entry is then swapped for a uniform one with probability
//! `noise`. Decode steps append fresh entries; each joins one of the groups
//! active in the step that creates it and is activated there.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cluster::{ClusterId, ClusterSet};
use crate::trace::{ActivationStep, ActivationTrace, EntryId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Popularity {
    /// Weight `1 / (g + 1)^s`.
    Zipf(f64),
    Uniform,
}

impl Default for Popularity {
    fn default() -> Self {
        Popularity::Zipf(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedSpec {
    pub n_entries: u32,
    pub n_groups: u32,
    pub group_overlap: f64,
    pub sparsity: f64,
    pub noise: f64,
    /// Profiling steps (no new entries).
    pub steps: u32,
    /// Steps that append new entries after profiling.
    pub decode_steps: u32,
    pub new_per_step: u32,
    pub popularity: Popularity,
    pub seed: u64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            n_entries: 1024,
            n_groups: 16,
            group_overlap: 0.1,
            sparsity: 0.10,
            noise: 0.02,
            steps: 256,
            decode_steps: 0,
            new_per_step: 1,
            popularity: Popularity::default(),
            seed: 0,
        }
    }
}

impl PlantedSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_entries == 0 || self.n_groups == 0 || self.n_groups > self.n_entries {
            return Err(Error::InvalidParameter("need 0 < n_groups <= n_entries"));
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::InvalidParameter("sparsity must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidParameter("noise must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.group_overlap) {
            return Err(Error::InvalidParameter("group_overlap must be in [0, 1]"));
        }
        if let Popularity::Zipf(s) = self.popularity {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::InvalidParameter("zipf exponent must be >= 0"));
            }
        }
        if self.steps + self.decode_steps == 0 {
            return Err(Error::EmptyTrace);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedWorkload {
    pub trace: ActivationTrace,
    /// Ground-truth groups, members ascending, including decode entries.
    pub groups: Vec<Vec<EntryId>>,
}

fn round(x: f64) -> usize {
    libm::round(x) as usize
}

fn weights(spec: &PlantedSpec) -> Vec<f64> {
    (0..spec.n_groups)
        .map(|g| match spec.popularity {
            Popularity::Zipf(s) => 1.0 / libm::pow(g as f64 + 1.0, s),
            Popularity::Uniform => 1.0,
        })
        .collect()
}

fn pick(rng: &mut ChaCha8Rng, w: &[f64], taken: &[bool]) -> Option<usize> {
    let total: f64 = w
        .iter()
        .zip(taken)
        .filter(|(_, t)| !**t)
        .map(|(w, _)| w)
        .sum();
    if total <= 0.0 {
        return None;
    }
    let mut r = rng.random::<f64>() * total;
    let mut last = None;
    for (g, (&wg, &t)) in w.iter().zip(taken).enumerate() {
        if t {
            continue;
        }
        last = Some(g);
        if r < wg {
            return Some(g);
        }
        r -= wg;
    }
    last
}

/// Base blocks plus boundary overlap.
fn planted_groups(spec: &PlantedSpec) -> Vec<Vec<EntryId>> {
    let n = spec.n_entries as usize;
    let k = spec.n_groups as usize;
    let blocks: Vec<core::ops::Range<usize>> = (0..k).map(|g| g * n / k..(g + 1) * n / k).collect();
    (0..k)
        .map(|g| {
            let mut m: Vec<EntryId> = blocks[g].clone().map(|e| EntryId(e as u32)).collect();
            if let Some(next) = blocks.get(g + 1) {
                let shared = round(spec.group_overlap * next.len() as f64);
                m.extend(next.clone().take(shared).map(|e| EntryId(e as u32)));
            }
            m
        })
        .collect()
}

pub fn generate(spec: &PlantedSpec) -> Result<PlantedWorkload> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w = weights(spec);
    let mut groups = planted_groups(spec);
    let mut count = spec.n_entries as usize;
    let total_steps = spec.steps + spec.decode_steps;
    let mut steps = Vec::with_capacity(total_steps as usize);

    for t in 0..total_steps {
        let fresh_count = if t >= spec.steps {
            spec.new_per_step as usize
        } else {
            0
        };
        count += fresh_count;
        let budget = round(spec.sparsity * count as f64).clamp(1, count);

        // Groups are picked until their members cover the budget.
        let mut taken = vec![false; groups.len()];
        let mut picked = Vec::new();
        let mut covered = fresh_count;
        while covered < budget {
            let Some(g) = pick(&mut rng, &w, &taken) else {
                break;
            };
            taken[g] = true;
            picked.push(g);
            covered += groups[g].len();
        }
        if picked.is_empty() {
            let g = pick(&mut rng, &w, &taken).expect("non-empty weights");
            picked.push(g);
        }

        // New entries join one of the active groups and are active at once.
        let mut act: BTreeSet<EntryId> = BTreeSet::new();
        let mut fresh = Vec::with_capacity(fresh_count);
        for k in 0..fresh_count {
            let e = EntryId((count - fresh_count + k) as u32);
            let g = picked[rng.random_range(0..picked.len())];
            groups[g].push(e);
            fresh.push(e);
            act.insert(e);
        }
        for &g in &picked {
            for &e in &groups[g] {
                if act.len() >= budget {
                    break;
                }
                act.insert(e);
            }
        }

        if spec.noise > 0.0 {
            let chosen: Vec<EntryId> = act.iter().copied().filter(|e| !fresh.contains(e)).collect();
            for e in chosen {
                if act.len() >= count - 1 {
                    break;
                }
                if rng.random::<f64>() < spec.noise {
                    act.remove(&e);
                    loop {
                        let r = EntryId(rng.random_range(0..count as u32));
                        if r != e && act.insert(r) {
                            break;
                        }
                    }
                }
            }
        }

        steps.push(ActivationStep::new(
            act.into_iter().collect::<Vec<_>>(),
            fresh,
        ));
    }

    for g in &mut groups {
        g.sort_unstable();
    }
    Ok(PlantedWorkload {
        trace: ActivationTrace::new(spec.n_entries, steps)?,
        groups,
    })
}

/// `steps` sets of `per_step` distinct cluster ids drawn by popularity over
/// `n_clusters`. Popularity rank follows a seeded shuffle of the ids, so it
/// is independent of cluster size.
pub fn cluster_stream(
    n_clusters: u32,
    per_step: u32,
    steps: usize,
    popularity: Popularity,
    seed: u64,
) -> Result<Vec<BTreeSet<ClusterId>>> {
    if n_clusters == 0 || per_step == 0 || per_step > n_clusters {
        return Err(Error::InvalidParameter("need 0 < per_step <= n_clusters"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PlantedSpec {
        n_groups: n_clusters,
        popularity,
        ..PlantedSpec::default()
    };
    let w = weights(&spec);
    let mut rank: Vec<u32> = (0..n_clusters).collect();
    rank.shuffle(&mut rng);
    Ok((0..steps)
        .map(|_| {
            let mut taken = vec![false; w.len()];
            (0..per_step)
                .map(|_| {
                    let g = pick(&mut rng, &w, &taken).expect("per_step <= n_clusters");
                    taken[g] = true;
                    ClusterId(rank[g])
                })
                .collect()
        })
        .collect())
}

fn jaccard(a: &[EntryId], b: &BTreeSet<EntryId>) -> f64 {
    let inter = a.iter().filter(|e| b.contains(e)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Mean over planted groups of the best Jaccard similarity with any
/// cluster. Groups are compared on entries below `cs.n_entries()`.
pub fn set_agreement(groups: &[Vec<EntryId>], cs: &ClusterSet) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let n = cs.n_entries();
    let clusters: Vec<BTreeSet<EntryId>> = cs
        .clusters()
        .iter()
        .map(|c| c.members.iter().copied().collect())
        .collect();
    let total: f64 = groups
        .iter()
        .map(|g| {
            let g: Vec<EntryId> = g.iter().copied().filter(|e| e.index() < n).collect();
            clusters.iter().map(|c| jaccard(&g, c)).fold(0.0, f64::max)
        })
        .sum();
    total / groups.len() as f64
}
