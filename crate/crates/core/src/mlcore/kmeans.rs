//! Lloyd's k-means with k-means++ seeding.
//!
//! Rows are handled through their non-zero entries, which keeps one-hot
//! matrices cheap: `|x - c|^2 = |x|^2 - 2 x.c + |c|^2`.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use super::Clustering;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Clone, Debug)]
pub struct KMeansFit {
    pub clustering: Clustering,
    pub centroids: Array2<f64>,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations: usize,
}

pub fn kmeans(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<Clustering> {
    Ok(kmeans_fit(x, k, seed)?.clustering)
}

pub fn kmeans_fit(x: ArrayView2<f64>, k: usize, seed: u64) -> Result<KMeansFit> {
    let n = x.nrows();
    if k == 0 || k > n {
        return Err(Error::param(format!("k-means needs 1 <= k <= n (k={k}, n={n})")));
    }
    let contiguous = x.as_standard_layout();
    let x = contiguous.view();
    let rows = SparseRows::new(x);
    let mut rng = rng::seeded(seed);
    let mut centroids = plus_plus_init(x, &rows, k, &mut rng);

    let mut assignment = vec![usize::MAX; n];
    let mut iterations = 0;
    for it in 1..=MAX_ITERATIONS {
        iterations = it;
        let norms: Vec<f64> = centroids.rows().into_iter().map(|c| c.dot(&c)).collect();
        let mut next: Vec<usize> = (0..n).map(|i| nearest(&rows, i, &centroids, &norms)).collect();
        repair_empty(&rows, &mut next, &mut centroids, k);
        if next == assignment {
            break;
        }
        assignment = next;
        centroids = means(x, &assignment, k, &centroids);
    }

    let inertia = (0..n)
        .map(|i| rows.sq_dist(i, centroids.row(assignment[i]).as_slice().unwrap()))
        .sum();
    Ok(KMeansFit {
        clustering: Clustering::new(k, assignment)?,
        centroids,
        inertia,
        iterations,
    })
}

struct SparseRows {
    nz: Vec<Vec<(usize, f64)>>,
    sq_norm: Vec<f64>,
}

impl SparseRows {
    fn new(x: ArrayView2<f64>) -> Self {
        let nz: Vec<Vec<(usize, f64)>> = x
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        let sq_norm = nz.iter().map(|r| r.iter().map(|(_, v)| v * v).sum()).collect();
        SparseRows { nz, sq_norm }
    }

    fn sq_dist_with_norm(&self, i: usize, c: &[f64], c_norm: f64) -> f64 {
        let dot: f64 = self.nz[i].iter().map(|(j, v)| v * c[*j]).sum();
        (self.sq_norm[i] - 2.0 * dot + c_norm).max(0.0)
    }

    fn sq_dist(&self, i: usize, c: &[f64]) -> f64 {
        self.sq_dist_with_norm(i, c, c.iter().map(|v| v * v).sum())
    }
}

fn plus_plus_init(x: ArrayView2<f64>, rows: &SparseRows, k: usize, rng: &mut rng::Rng) -> Array2<f64> {
    let n = x.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| rows.sq_dist(i, x.row(chosen[0]).as_slice().unwrap()))
        .collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if *w > 0.0 && target < *w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            // guard against rounding leaving us on a zero-weight row
            if d2[pick] == 0.0 {
                pick = d2.iter().rposition(|w| *w > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            // fewer distinct rows than k: any unused row
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        let c = x.row(next);
        let c = c.as_slice().unwrap();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(rows.sq_dist(i, c));
        }
    }
    x.select(ndarray::Axis(0), &chosen).as_standard_layout().to_owned()
}

/// Nearest centroid; ties go to the lower index.
fn nearest(rows: &SparseRows, i: usize, centroids: &Array2<f64>, norms: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.rows().into_iter().enumerate() {
        let d = rows.sq_dist_with_norm(i, row.as_slice().unwrap(), norms[c]);
        if d < best.1 {
            best = (c, d);
        }
    }
    best.0
}

/// Gives every empty cluster the row farthest from its centroid, taken from a
/// cluster that can spare it.
fn repair_empty(rows: &SparseRows, assignment: &mut [usize], centroids: &mut Array2<f64>, k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignment.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for (i, &a) in assignment.iter().enumerate() {
            if sizes[a] < 2 {
                continue;
            }
            let d = rows.sq_dist(i, centroids.row(a).as_slice().unwrap());
            if best.is_none_or(|(bd, _)| d > bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.expect("k <= n leaves a cluster with two or more rows");
        sizes[assignment[i]] -= 1;
        assignment[i] = empty;
        sizes[empty] = 1;
        let dense: Vec<f64> = {
            let mut v = vec![0.0; centroids.ncols()];
            for (j, x) in &rows.nz[i] {
                v[*j] = *x;
            }
            v
        };
        centroids.row_mut(empty).assign(&ndarray::ArrayView1::from(&dense));
    }
}

fn means(x: ArrayView2<f64>, assignment: &[usize], k: usize, previous: &Array2<f64>) -> Array2<f64> {
    let mut sums = Array2::<f64>::zeros((k, x.ncols()));
    let mut counts = vec![0usize; k];
    for (i, &a) in assignment.iter().enumerate() {
        sums.row_mut(a).scaled_add(1.0, &x.row(i));
        counts[a] += 1;
    }
    for (c, count) in counts.iter().enumerate() {
        if *count == 0 {
            sums.row_mut(c).assign(&previous.row(c));
        } else {
            sums.row_mut(c).mapv_inplace(|v| v / *count as f64);
        }
    }
    sums
}
