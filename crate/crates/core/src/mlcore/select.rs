//! Number-of-clusters search by silhouette analysis.
//!
//! For each candidate `k` the clustering is scored by `q(k)`, the number of
//! clusters whose best member coefficient reaches the overall silhouette
//! score. The largest `q` wins, then the higher score, then the smaller `k`.
//! Candidates run from 2 to the smallest of `k_max`, `n - 1` and the number
//! of distinct rows.

use std::sync::OnceLock;

use log::warn;
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::Serialize;

use super::{hac, kmeans, silhouette, Clustering, Dendrogram, DistanceMatrix, SilhouetteReport};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_K_MAX: usize = 50;

/// Absolute slack when comparing a cluster's best coefficient with the score.
const REACH_TOLERANCE: f64 = 1e-12;

/// Produces a clustering of a fixed data set for any requested `k`.
pub trait Clusterer: Sync {
    fn cluster(&self, k: usize) -> Result<Clustering>;
}

pub struct KMeansClusterer<'a> {
    x: ArrayView2<'a, f64>,
    seed: u64,
}

impl<'a> KMeansClusterer<'a> {
    pub fn new(x: ArrayView2<'a, f64>, seed: u64) -> Self {
        KMeansClusterer { x, seed }
    }
}

impl Clusterer for KMeansClusterer<'_> {
    fn cluster(&self, k: usize) -> Result<Clustering> {
        kmeans::kmeans(self.x, k, rng::derive_seed(self.seed, &[k as u64]))
    }
}

/// Ward clustering; the dendrogram is built once and cut per `k`.
pub struct WardClusterer<'a> {
    d: &'a DistanceMatrix,
    dendrogram: OnceLock<Dendrogram>,
}

impl<'a> WardClusterer<'a> {
    pub fn new(d: &'a DistanceMatrix) -> Self {
        WardClusterer {
            d,
            dendrogram: OnceLock::new(),
        }
    }
}

impl Clusterer for WardClusterer<'_> {
    fn cluster(&self, k: usize) -> Result<Clustering> {
        self.dendrogram
            .get_or_init(|| hac::ward_dendrogram(self.d))
            .cut(k)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KCandidate {
    pub k: usize,
    pub q: usize,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct KSelection {
    pub k: usize,
    pub clustering: Clustering,
    /// Silhouette report of the chosen clustering; absent for degenerate data.
    pub report: Option<SilhouetteReport>,
    /// Set when every pairwise distance is zero and silhouette is undefined.
    pub degenerate: bool,
    pub candidates: Vec<KCandidate>,
}

fn reach_count(r: &SilhouetteReport) -> usize {
    r.per_cluster_max
        .iter()
        .filter(|m| **m >= r.score - REACH_TOLERANCE)
        .count()
}

pub fn select_k(d: &DistanceMatrix, clusterer: &dyn Clusterer, k_max: usize) -> Result<KSelection> {
    let n = d.n();
    if n < 3 {
        return Err(Error::param(format!("cluster-count search needs n >= 3 (n={n})")));
    }
    if k_max < 2 {
        return Err(Error::param("k_max must be at least 2"));
    }
    if d.all_zero() {
        warn!("all {n} rows are identical; silhouette undefined, using k=2");
        return Ok(KSelection {
            k: 2,
            clustering: clusterer.cluster(2)?,
            report: None,
            degenerate: true,
            candidates: Vec::new(),
        });
    }
    // Beyond the number of distinct rows a clustering can only split
    // duplicates, which zeroes their coefficients and inflates q.
    let upper = k_max.min(n - 1).min(d.distinct_rows());
    let evaluated: Vec<(Clustering, SilhouetteReport)> = (2..=upper)
        .into_par_iter()
        .map(|k| {
            let c = clusterer.cluster(k)?;
            let r = silhouette::silhouette(d, &c)?;
            Ok((c, r))
        })
        .collect::<Result<_>>()?;

    let candidates: Vec<KCandidate> = evaluated
        .iter()
        .map(|(c, r)| KCandidate {
            k: c.k(),
            q: reach_count(r),
            score: r.score,
        })
        .collect();
    let mut best = 0;
    for (i, cand) in candidates.iter().enumerate().skip(1) {
        let cur = &candidates[best];
        if cand.q > cur.q || (cand.q == cur.q && cand.score > cur.score) {
            best = i;
        }
    }
    let (clustering, report) = evaluated.into_iter().nth(best).expect("non-empty range");
    Ok(KSelection {
        k: clustering.k(),
        clustering,
        report: Some(report),
        degenerate: false,
        candidates,
    })
}
