use ndarray::ArrayView2;
use rayon::prelude::*;

use super::DistanceMatrix;
use crate::error::{Error, Result};

/// Average distance from each row to its `k` nearest other rows.
pub fn knn_avg_distance(x: ArrayView2<f64>, k: usize) -> Result<Vec<f64>> {
    check_k(x.nrows(), k)?;
    knn_avg_distance_from(&DistanceMatrix::euclidean(x), k)
}

/// Same as [`knn_avg_distance`] over a precomputed distance matrix.
/// Neighbours at equal distance are taken in index order.
pub fn knn_avg_distance_from(d: &DistanceMatrix, k: usize) -> Result<Vec<f64>> {
    let n = d.n();
    check_k(n, k)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut neigh: Vec<(f64, usize)> = d
                .row(i)
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, v)| (*v, j))
                .collect();
            neigh.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            neigh[..k].iter().map(|(v, _)| v).sum::<f64>() / k as f64
        })
        .collect())
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k >= n {
        return Err(Error::param(format!(
            "K must satisfy 1 <= K <= n-1 (K={k}, n={n})"
        )));
    }
    Ok(())
}
