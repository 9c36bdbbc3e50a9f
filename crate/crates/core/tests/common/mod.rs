//! Independent reference implementations used by the oracle suites.
#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform rows in [0,1)^d.
pub fn continuous_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| rng.random::<f64>())
}

/// 0/1 rows, often with duplicates, like one-hot encodings.
pub fn binary_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
}

fn dist(x: &Array2<f64>, i: usize, j: usize) -> f64 {
    x.row(i)
        .iter()
        .zip(x.row(j).iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance to the k closest other rows, by sorting all distances.
pub fn brute_knn(x: &Array2<f64>, k: usize) -> Vec<f64> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut ds: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(x, i, j)).collect();
            ds.sort_by(f64::total_cmp);
            ds[..k].iter().sum::<f64>() / k as f64
        })
        .collect()
}

/// One merge of the naive Ward agglomeration: smallest members of the two
/// clusters (ascending) and the Ward distance sqrt(2 * ESS increase).
#[derive(Clone, Debug)]
pub struct NaiveMerge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

fn centroid(x: &Array2<f64>, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; x.ncols()];
    for &m in members {
        for (cj, v) in c.iter_mut().zip(x.row(m).iter()) {
            *cj += v;
        }
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    c
}

/// Ward agglomeration recomputing every cluster pair's ESS increase from
/// centroids at each step.
pub fn naive_ward(x: &Array2<f64>) -> (Vec<NaiveMerge>, Vec<Vec<Vec<usize>>>) {
    let mut clusters: Vec<Vec<usize>> = (0..x.nrows()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    // partitions[m] is the clustering after m merges
    let mut partitions = vec![clusters.clone()];
    while clusters.len() > 1 {
        let mut best: Option<(f64, usize, usize)> = None;
        for p in 0..clusters.len() {
            for q in p + 1..clusters.len() {
                let (ca, cb) = (centroid(x, &clusters[p]), centroid(x, &clusters[q]));
                let sq: f64 = ca.iter().zip(&cb).map(|(a, b)| (a - b) * (a - b)).sum();
                let (na, nb) = (clusters[p].len() as f64, clusters[q].len() as f64);
                let delta = na * nb / (na + nb) * sq;
                if best.is_none_or(|(bv, _, _)| delta < bv) {
                    best = Some((delta, p, q));
                }
            }
        }
        let (delta, p, q) = best.unwrap();
        let (ma, mb) = (clusters[p][0], clusters[q][0]);
        let moved = clusters.remove(q);
        clusters[p].extend(moved);
        clusters[p].sort_unstable();
        merges.push(NaiveMerge {
            a: ma.min(mb),
            b: ma.max(mb),
            height: (2.0 * delta).sqrt(),
        });
        partitions.push(clusters.clone());
    }
    (merges, partitions)
}

/// Canonical form of a partition: clusters sorted internally and by first member.
pub fn canonical(mut p: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    p.iter_mut().for_each(|c| c.sort_unstable());
    p.sort();
    p
}

pub fn partition_of(assignment: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut p = vec![Vec::new(); k];
    for (i, &c) in assignment.iter().enumerate() {
        p[c].push(i);
    }
    canonical(p)
}

/// Silhouette straight from the definition, over raw coordinates.
pub fn direct_silhouette(x: &Array2<f64>, assignment: &[usize], k: usize) -> Vec<f64> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let own = assignment[i];
            let own_members: Vec<usize> = (0..n).filter(|&j| j != i && assignment[j] == own).collect();
            if own_members.is_empty() {
                return 0.0;
            }
            let a = own_members.iter().map(|&j| dist(x, i, j)).sum::<f64>() / own_members.len() as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| {
                    let m: Vec<usize> = (0..n).filter(|&j| assignment[j] == c).collect();
                    m.iter().map(|&j| dist(x, i, j)).sum::<f64>() / m.len() as f64
                })
                .fold(f64::INFINITY, f64::min);
            if a.max(b) == 0.0 {
                0.0
            } else {
                (b - a) / a.max(b)
            }
        })
        .collect()
}

/// Twice the U statistic of `a` from pairwise comparisons (ties count one half).
fn u_doubled(a: &[f64], b: &[f64]) -> i64 {
    let mut u2 = 0;
    for x in a {
        for y in b {
            u2 += match x.partial_cmp(y).unwrap() {
                std::cmp::Ordering::Greater => 2,
                std::cmp::Ordering::Equal => 1,
                std::cmp::Ordering::Less => 0,
            };
        }
    }
    u2
}

/// (U, two-sided p) by enumerating every split of the pooled sample.
pub fn enumerated_mwu(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (na, n) = (a.len(), pooled.len());
    let centre2 = (a.len() * b.len()) as i64;
    let observed = (2 * u_doubled(a, b) - centre2 * 2).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let (mut ga, mut gb) = (Vec::new(), Vec::new());
        for (i, v) in pooled.iter().enumerate() {
            if mask & (1 << i) != 0 {
                ga.push(*v);
            } else {
                gb.push(*v);
            }
        }
        total += 1;
        if (2 * u_doubled(&ga, &gb) - centre2 * 2).abs() >= observed {
            extreme += 1;
        }
    }
    (u_doubled(a, b) as f64 / 2.0, extreme as f64 / total as f64)
}
