//! Two-sided Mann–Whitney U test.
//!
//! Ranks use midranks for ties. Small samples get an exact p-value from the
//! permutation distribution of the rank sum (ties included); larger ones use
//! the tie-corrected normal approximation with continuity correction.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Exact enumeration is used while the smaller sample has at most this many values.
pub const EXACT_LIMIT: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p: f64,
    pub exact: bool,
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::param("both samples must be non-empty"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::param("samples must not contain NaN"));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let (doubled, tie_sizes) = doubled_midranks(a, b);
    let rank_sum2: u64 = doubled[..na].iter().sum();
    let u = rank_sum2 as f64 / 2.0 - (na * (na + 1)) as f64 / 2.0;

    if na.min(nb) > EXACT_LIMIT {
        let mu = (na * nb) as f64 / 2.0;
        let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        let nf = n as f64;
        let var = (na * nb) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        if var <= 0.0 {
            return Ok(MannWhitney { u, p: 1.0, exact: false });
        }
        let z = (((u - mu).abs() - 0.5) / var.sqrt()).max(0.0);
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        let p = (2.0 * (1.0 - normal.cdf(z))).min(1.0);
        return Ok(MannWhitney { u, p, exact: false });
    }

    // Centre of the doubled rank sum of a size-`na` subset is na*(n+1).
    let centre = (na * (n + 1)) as i64;
    let observed = (rank_sum2 as i64 - centre).abs();
    let small = na.min(nb);
    let counts = subset_sum_counts(&doubled, small);
    let centre_small = (small * (n + 1)) as i64;
    let (mut extreme, mut total) = (0.0, 0.0);
    for (s, c) in counts.iter().enumerate() {
        if *c == 0.0 {
            continue;
        }
        total += c;
        if (s as i64 - centre_small).abs() >= observed {
            extreme += c;
        }
    }
    Ok(MannWhitney {
        u,
        p: (extreme / total).min(1.0),
        exact: true,
    })
}

/// Twice the midrank of every value (a's values first, then b's), which keeps
/// tied ranks integral, plus the size of every tie group.
fn doubled_midranks(a: &[f64], b: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let values: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut doubled = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1..=end, doubled midrank = start+1+end
        for &i in &order[start..end] {
            doubled[i] = (start + 1 + end) as u64;
        }
        ties.push(end - start);
        start = end;
    }
    (doubled, ties)
}

/// `counts[s]` = number of `size`-subsets of `weights` summing to `s`.
fn subset_sum_counts(weights: &[u64], size: usize) -> Vec<f64> {
    let max_sum: usize = {
        let mut w: Vec<u64> = weights.to_vec();
        w.sort_unstable_by(|x, y| y.cmp(x));
        w[..size].iter().sum::<u64>() as usize
    };
    // table[j][s]: subsets of size j with sum s
    let mut table = vec![vec![0.0f64; max_sum + 1]; size + 1];
    table[0][0] = 1.0;
    for &w in weights {
        let w = w as usize;
        for j in (1..=size).rev() {
            let (lower, upper) = table.split_at_mut(j);
            let prev = &lower[j - 1];
            let cur = &mut upper[0];
            for s in (w..=max_sum).rev() {
                cur[s] += prev[s - w];
            }
        }
    }
    table.pop().unwrap()
}
