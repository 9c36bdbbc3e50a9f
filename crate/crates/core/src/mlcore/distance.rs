use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Pairwise distances between the rows of `x`. Each cell is computed
    /// independently, so the result is exactly symmetric and thread-count
    /// independent.
    pub fn euclidean(x: ArrayView2<f64>) -> Self {
        let n = x.nrows();
        let d: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let xi = x.row(i);
                (0..n).map(move |j| {
                    if i == j {
                        0.0
                    } else {
                        xi.iter()
                            .zip(x.row(j))
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>()
                            .sqrt()
                    }
                })
            })
            .collect();
        DistanceMatrix { n, d }
    }

    /// Wraps a full row-major `n × n` matrix after checking it is a valid
    /// dissimilarity (finite, non-negative, symmetric, zero diagonal).
    pub fn from_full(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::param(format!("expected {} cells, got {}", n * n, d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::param("distance matrix diagonal must be zero"));
            }
            for j in 0..n {
                let v = d[i * n + j];
                if !v.is_finite() || v < 0.0 || v != d[j * n + i] {
                    return Err(Error::param(format!("invalid distance at ({i},{j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Rows not at distance zero from any earlier row.
    pub fn distinct_rows(&self) -> usize {
        (0..self.n)
            .filter(|&i| (0..i).all(|j| self.get(i, j) != 0.0))
            .count()
    }

    /// Whether every pairwise distance is zero.
    pub fn all_zero(&self) -> bool {
        self.d.iter().all(|v| *v == 0.0)
    }
}
