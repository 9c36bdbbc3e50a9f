//! Isolation forest.
//!
//! Each tree is grown on a subsample by repeatedly picking a random feature
//! that is not constant within the node and a uniform split value between its
//! minimum and maximum. Growth stops when a node holds a single row, when all
//! of its rows are identical, or at the height limit `ceil(log2(subsample))`.
//! The anomaly score of a row is `2^(-E[h] / c(subsample))`.
//!
//! Subsamples are drawn from keyed hashes of row identities rather than row
//! positions, and node construction only depends on the set of rows in the
//! node, so permuting the input permutes the scores.

use log::warn;
use ndarray::{ArrayView1, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IsolationForestParams {
    pub trees: usize,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsolationForestParams {
    fn default() -> Self {
        IsolationForestParams {
            trees: 100,
            subsample: 256,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
enum Node {
    Split {
        feature: usize,
        value: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Clone, Debug)]
struct IsolationTree {
    nodes: Vec<Node>,
}

impl IsolationTree {
    fn path_length(&self, x: ArrayView1<f64>) -> f64 {
        let mut idx = 0;
        let mut depth = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { size } => return depth as f64 + average_path_length(*size),
                Node::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    idx = if x[*feature] < *value { *left } else { *right };
                    depth += 1;
                }
            }
        }
    }

    fn height(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Clone, Debug)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    seed: u64,
}

impl IsolationForest {
    /// Fits on the rows of `x`, identifying rows by position.
    pub fn fit(x: ArrayView2<f64>, params: &IsolationForestParams) -> Result<Self> {
        let ids: Vec<u64> = (0..x.nrows() as u64).collect();
        Self::fit_with_ids(x, &ids, params)
    }

    /// Fits with caller-supplied stable row identities (must be distinct).
    pub fn fit_with_ids(
        x: ArrayView2<f64>,
        ids: &[u64],
        params: &IsolationForestParams,
    ) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::param("isolation forest needs at least 2 rows"));
        }
        if ids.len() != n {
            return Err(Error::param("one identity per row required"));
        }
        if params.trees == 0 || params.subsample < 2 {
            return Err(Error::param("isolation forest needs trees >= 1 and subsample >= 2"));
        }
        let psi = if params.subsample > n {
            warn!("subsample {} exceeds {} rows; clamping", params.subsample, n);
            n
        } else {
            params.subsample
        };
        let height_limit = (psi as f64).log2().ceil() as usize;

        let trees = (0..params.trees)
            .into_par_iter()
            .map(|t| {
                let tree_seed = rng::derive_seed(params.seed, &[t as u64]);
                let mut keyed: Vec<(u64, u64, usize)> = ids
                    .iter()
                    .enumerate()
                    .map(|(r, id)| (rng::mix(tree_seed ^ rng::mix(*id)), *id, r))
                    .collect();
                keyed.sort_unstable();
                let sample: Vec<usize> = keyed[..psi].iter().map(|k| k.2).collect();
                let mut builder = TreeBuilder {
                    x,
                    rng: rng::split(params.seed, t as u64),
                    nodes: Vec::new(),
                    height_limit,
                };
                builder.grow(sample, 0);
                IsolationTree {
                    nodes: builder.nodes,
                }
            })
            .collect();

        Ok(IsolationForest {
            trees,
            subsample_size: psi,
            seed: params.seed,
        })
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_height(&self) -> usize {
        self.trees.iter().map(IsolationTree::height).max().unwrap_or(0)
    }

    /// Mean path length of `x` over all trees, summed in tree order.
    pub fn mean_path_length(&self, x: ArrayView1<f64>) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score(&self, x: ArrayView1<f64>) -> f64 {
        2f64.powf(-self.mean_path_length(x) / average_path_length(self.subsample_size))
    }

    pub fn score_rows(&self, x: ArrayView2<f64>) -> Vec<f64> {
        (0..x.nrows())
            .into_par_iter()
            .map(|i| self.score(x.row(i)))
            .collect()
    }
}

struct TreeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    rng: rng::Rng,
    nodes: Vec<Node>,
    height_limit: usize,
}

impl TreeBuilder<'_> {
    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let idx = self.nodes.len();
        self.nodes.push(Node::Leaf { size: rows.len() });
        if rows.len() <= 1 || depth >= self.height_limit {
            return idx;
        }
        let Some((feature, lo, hi)) = self.pick_feature(&rows) else {
            return idx;
        };
        let value = self.rng.random_range(lo..hi);
        let (left, right): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| self.x[[r, feature]] < value);
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[idx] = Node::Split {
            feature,
            value,
            left: l,
            right: r,
        };
        idx
    }

    /// Uniform choice among features that vary within `rows`: draw features
    /// without replacement until a non-constant one turns up.
    fn pick_feature(&mut self, rows: &[usize]) -> Option<(usize, f64, f64)> {
        let mut candidates: Vec<usize> = (0..self.x.ncols()).collect();
        while !candidates.is_empty() {
            let pick = self.rng.random_range(0..candidates.len());
            let f = candidates.swap_remove(pick);
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                let v = self.x[[r, f]];
                (lo.min(v), hi.max(v))
            });
            if lo < hi {
                return Some((f, lo, hi));
            }
        }
        None
    }
}

/// Average unsuccessful-search path length in a binary search tree of `n` nodes.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let n = n as f64;
            2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
        }
    }
}

pub fn isolation_forest_scores(
    x: ArrayView2<f64>,
    trees: usize,
    subsample: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let forest = IsolationForest::fit(
        x,
        &IsolationForestParams {
            trees,
            subsample,
            seed,
        },
    )?;
    Ok(forest.score_rows(x))
}
