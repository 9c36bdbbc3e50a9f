use rayon::prelude::*;
use serde::Serialize;

use super::{Clustering, DistanceMatrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SilhouetteReport {
    pub per_point: Vec<f64>,
    pub score: f64,
    /// Indexed by cluster id.
    pub per_cluster_max: Vec<f64>,
}

/// Silhouette coefficients. Members of singleton clusters get 0, as do points
/// whose own-cluster and nearest-cluster mean distances are both 0.
pub fn silhouette(d: &DistanceMatrix, c: &Clustering) -> Result<SilhouetteReport> {
    if c.k() < 2 {
        return Err(Error::param("silhouette needs at least 2 clusters"));
    }
    if c.len() != d.n() {
        return Err(Error::param("clustering and distance matrix disagree on row count"));
    }
    let sizes = c.sizes();
    let assignment = c.assignment();
    let per_point: Vec<f64> = (0..d.n())
        .into_par_iter()
        .map(|i| {
            let own = assignment[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; c.k()];
            for (j, v) in d.row(i).iter().enumerate() {
                sums[assignment[j]] += v;
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..c.k())
                .filter(|&other| other != own)
                .map(|other| sums[other] / sizes[other] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom == 0.0 {
                0.0
            } else {
                (b - a) / denom
            }
        })
        .collect();

    let score = per_point.iter().sum::<f64>() / per_point.len() as f64;
    let mut per_cluster_max = vec![f64::NEG_INFINITY; c.k()];
    for (i, s) in per_point.iter().enumerate() {
        let m = &mut per_cluster_max[assignment[i]];
        *m = m.max(*s);
    }
    Ok(SilhouetteReport {
        per_point,
        score,
        per_cluster_max,
    })
}
