//! Reference implementations written straight from the algorithm
//! descriptions, kept deliberately naive.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

/// Density-ordered medoid selection and single-pass greedy expansion over a
/// full matrix `d`. Returns member lists, medoid first.
pub fn oracle_clusters(d: &[Vec<f64>], tau: f64) -> Vec<Vec<u32>> {
    let n = d.len();
    let mut rho = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if i != j && d[i][j] <= tau {
                rho[i] += 1;
            }
        }
    }
    let mut queue: Vec<usize> = (0..n).collect();
    // stable sort keeps ascending ids among equal densities
    queue.sort_by(|a, b| rho[*b].cmp(&rho[*a]));

    let mut covered = vec![false; n];
    let mut out: Vec<Vec<u32>> = Vec::new();
    for m in queue {
        if covered[m] {
            continue;
        }
        let mut cluster = vec![m];
        let mut cand: Vec<usize> = (0..n).filter(|&e| e != m && d[m][e] <= tau).collect();
        cand.sort_by(|a, b| d[m][*a].partial_cmp(&d[m][*b]).unwrap());
        for c in cand {
            let mut sum = 0.0;
            for &k in &cluster {
                sum += d[c][k];
            }
            if sum / cluster.len() as f64 <= tau {
                cluster.push(c);
            }
        }
        for &e in &cluster {
            covered[e] = true;
        }
        out.push(cluster.iter().map(|&e| e as u32).collect());
        if covered.iter().all(|&c| c) {
            break;
        }
    }
    out
}

/// Set algebra: union of the activated clusters minus the DRAM set.
pub fn brute_merge(
    clusters: &[Vec<u32>],
    activated: &[usize],
    dram: &BTreeSet<u32>,
) -> BTreeSet<u32> {
    let mut all = BTreeSet::new();
    for &c in activated {
        for &e in &clusters[c] {
            all.insert(e);
        }
    }
    all.difference(dram).copied().collect()
}

/// Smallest achievable maximum bucket size, by trying every assignment.
pub fn optimal_max_load(replicas: &[Vec<u32>], n_disk: u32) -> usize {
    fn go(i: usize, replicas: &[Vec<u32>], load: &mut Vec<usize>, best: &mut usize) {
        let cur = *load.iter().max().unwrap();
        if cur >= *best {
            return;
        }
        if i == replicas.len() {
            *best = cur;
            return;
        }
        for &d in &replicas[i] {
            load[d as usize] += 1;
            go(i + 1, replicas, load, best);
            load[d as usize] -= 1;
        }
    }
    let mut best = usize::MAX;
    go(0, replicas, &mut vec![0; n_disk as usize], &mut best);
    best
}

/// Device of the `k`-th member of every cluster under the pointer stripe.
pub fn stripe_devices(sizes: &[usize], n_disk: u32) -> Vec<Vec<u32>> {
    let mut p = 0u64;
    let mut out = Vec::new();
    for &s in sizes {
        let start = p % n_disk as u64;
        out.push(
            (0..s as u64)
                .map(|k| ((start + k) % n_disk as u64) as u32)
                .collect(),
        );
        p += s as u64;
    }
    out
}
