//! Numeric building blocks used by the prioritizers.

mod distance;
mod hac;
mod iforest;
mod kmeans;
mod knn;
mod mwu;
mod select;
mod silhouette;

pub use distance::DistanceMatrix;
pub use hac::{hac_ward, ward_dendrogram, Dendrogram, Merge, TIE_TOLERANCE};
pub use iforest::{average_path_length, isolation_forest_scores, IsolationForest, IsolationForestParams};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit, MAX_ITERATIONS};
pub use knn::{knn_avg_distance, knn_avg_distance_from};
pub use mwu::{mann_whitney_u, MannWhitney, EXACT_LIMIT};
pub use select::{select_k, Clusterer, KCandidate, KMeansClusterer, KSelection, WardClusterer, DEFAULT_K_MAX};
pub use silhouette::{silhouette, SilhouetteReport};

use crate::error::{Error, Result};

/// Hard partition of rows into `k` non-empty clusters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    k: usize,
    assignment: Vec<usize>,
}

impl Clustering {
    pub fn new(k: usize, assignment: Vec<usize>) -> Result<Self> {
        let mut used = vec![false; k];
        for &a in &assignment {
            if a >= k {
                return Err(Error::param(format!("cluster id {a} out of range for k={k}")));
            }
            used[a] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::param(format!("cluster {empty} has no members")));
        }
        Ok(Clustering { k, assignment })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }

    /// Row indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == c).collect()
    }
}
