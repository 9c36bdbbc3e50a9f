//! Agglomerative clustering with Ward linkage.
//!
//! The working matrix holds squared merge costs and is updated with the
//! Lance–Williams recurrence
//!
//! `D(i∪j, k) = ((n_i+n_k) D(i,k) + (n_j+n_k) D(j,k) - n_k D(i,j)) / (n_i+n_j+n_k)`
//!
//! starting from squared input distances. A cluster is named after its
//! smallest member. Merge costs within a relative `1e-10` are treated as equal
//! and resolved towards the lexicographically smallest cluster pair.

use super::{Clustering, DistanceMatrix};
use crate::error::{Error, Result};

/// Relative tolerance under which two merge costs count as tied.
pub const TIE_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Merge {
    /// Smallest member of the first cluster (always `< b`).
    pub a: usize,
    /// Smallest member of the second cluster.
    pub b: usize,
    /// Ward distance: square root of twice the increase in within-cluster sum of squares.
    pub height: f64,
    /// Size of the merged cluster.
    pub size: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Flat clustering after the first `n - k` merges. Cluster ids follow the
    /// order of each cluster's smallest member.
    pub fn cut(&self, k: usize) -> Result<Clustering> {
        if k == 0 || k > self.n {
            return Err(Error::param(format!(
                "cannot cut {} points into {k} clusters",
                self.n
            )));
        }
        let mut owner: Vec<usize> = (0..self.n).collect();
        for m in &self.merges[..self.n - k] {
            for o in owner.iter_mut() {
                if *o == m.b {
                    *o = m.a;
                }
            }
        }
        let mut ids = vec![usize::MAX; self.n];
        let mut next = 0;
        let assignment = owner
            .iter()
            .map(|&o| {
                if ids[o] == usize::MAX {
                    ids[o] = next;
                    next += 1;
                }
                ids[o]
            })
            .collect();
        Clustering::new(k, assignment)
    }
}

pub(crate) fn is_strictly_less(candidate: f64, best: f64) -> bool {
    candidate < best - TIE_TOLERANCE * best.abs().max(1.0)
}

pub fn ward_dendrogram(d: &DistanceMatrix) -> Dendrogram {
    let n = d.n();
    let mut cost: Vec<f64> = (0..n * n)
        .map(|c| {
            let v = d.get(c / n, c % n);
            v * v
        })
        .collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));

    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in (0..n).filter(|&i| active[i]) {
            for j in (i + 1..n).filter(|&j| active[j]) {
                let v = cost[i * n + j];
                if best.is_none_or(|(bv, _, _)| is_strictly_less(v, bv)) {
                    best = Some((v, i, j));
                }
            }
        }
        let (v, a, b) = best.expect("at least two active clusters");
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for k in (0..n).filter(|&k| active[k] && k != a && k != b) {
            let nk = size[k] as f64;
            let updated = ((na + nk) * cost[a * n + k] + (nb + nk) * cost[b * n + k] - nk * v)
                / (na + nb + nk);
            cost[a * n + k] = updated;
            cost[k * n + a] = updated;
        }
        active[b] = false;
        size[a] += size[b];
        merges.push(Merge {
            a,
            b,
            height: v.max(0.0).sqrt(),
            size: size[a],
        });
    }
    Dendrogram { n, merges }
}

pub fn hac_ward(d: &DistanceMatrix, k: usize) -> Result<Clustering> {
    if k == 0 || k > d.n() {
        return Err(Error::param(format!("HAC needs 1 <= k <= n (k={k}, n={})", d.n())));
    }
    ward_dendrogram(d).cut(k)
}
