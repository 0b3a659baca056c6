use nalgebra::{DMatrix, DVector};
use rand::prelude::*;

use super::Predictor;
use crate::error::{Error, Result};

/// Tree-growing parameters after mtry resolution.
#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry: usize,
}

#[derive(Debug, Clone)]
enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// A fitted CART regression tree with variance-reduction splits at
/// midpoints of consecutive distinct feature values; leaves predict the
/// mean response.
#[derive(Debug, Clone)]
pub struct FittedTree {
    nodes: Vec<Node>,
    p: usize,
}

struct Grower<'a, R: Rng> {
    u: &'a DVector<f64>,
    x: &'a DMatrix<f64>,
    params: TreeParams,
    rng: &'a mut R,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    sse: f64,
}

impl<'a, R: Rng> Grower<'a, R> {
    /// Best split over the candidate features, ties broken toward the
    /// lowest feature index then the lowest threshold (features and
    /// thresholds are scanned in ascending order with strict improvement).
    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let p = self.x.ncols();
        let features: Vec<usize> = if self.params.mtry >= p {
            (0..p).collect()
        } else {
            let mut f = rand::seq::index::sample(self.rng, p, self.params.mtry).into_vec();
            f.sort_unstable();
            f
        };
        let m = rows.len();
        let mut best: Option<BestSplit> = None;
        let mut order: Vec<usize> = Vec::with_capacity(m);
        for &j in &features {
            order.clear();
            order.extend_from_slice(rows);
            order.sort_by(|&a, &b| {
                self.x[(a, j)].partial_cmp(&self.x[(b, j)]).expect("finite features")
            });
            // Prefix sums of u and u^2 in feature order.
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            let mut prefix1 = Vec::with_capacity(m + 1);
            let mut prefix2 = Vec::with_capacity(m + 1);
            prefix1.push(0.0);
            prefix2.push(0.0);
            for &i in &order {
                s1 += self.u[i];
                s2 += self.u[i] * self.u[i];
                prefix1.push(s1);
                prefix2.push(s2);
            }
            let total1 = s1;
            let total2 = s2;
            for k in self.params.min_leaf..=(m - self.params.min_leaf) {
                let lo = self.x[(order[k - 1], j)];
                let hi = self.x[(order[k], j)];
                if lo == hi {
                    continue;
                }
                let left_sse = prefix2[k] - prefix1[k] * prefix1[k] / k as f64;
                let rn = (m - k) as f64;
                let r1 = total1 - prefix1[k];
                let right_sse = (total2 - prefix2[k]) - r1 * r1 / rn;
                let sse = left_sse + right_sse;
                if best.as_ref().map_or(true, |b| sse < b.sse) {
                    best = Some(BestSplit { feature: j, threshold: 0.5 * (lo + hi), sse });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: &[usize], depth: usize) -> usize {
        let m = rows.len();
        let mean = rows.iter().map(|&i| self.u[i]).sum::<f64>() / m as f64;
        let depth_cap = self.params.max_depth.map_or(false, |d| depth >= d);
        let pure = rows.iter().all(|&i| self.u[i] == self.u[rows[0]]);
        if depth_cap || pure || m < 2 * self.params.min_leaf {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }
        match self.best_split(rows) {
            None => {
                self.nodes.push(Node::Leaf { value: mean });
                self.nodes.len() - 1
            }
            Some(split) => {
                let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| self.x[(i, split.feature)] <= split.threshold);
                let id = self.nodes.len();
                self.nodes.push(Node::Leaf { value: mean }); // placeholder
                let left = self.grow(&left_rows, depth + 1);
                let right = self.grow(&right_rows, depth + 1);
                self.nodes[id] =
                    Node::Split { feature: split.feature, threshold: split.threshold, left, right };
                id
            }
        }
    }
}

/// Fits a CART regression tree on the rows `rows` (repeats allowed, as in
/// a bootstrap sample). `rng` drives per-split feature subsampling when
/// `params.mtry < p`.
pub(crate) fn fit_tree_on_rows(
    u: &DVector<f64>,
    x: &DMatrix<f64>,
    rows: &[usize],
    params: &TreeParams,
    rng: &mut impl Rng,
) -> Result<FittedTree> {
    if u.len() != x.nrows() {
        return Err(Error::InvalidArgument("response/design row mismatch".into()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidArgument("empty training sample".into()));
    }
    if rows.iter().any(|&i| i >= x.nrows()) {
        return Err(Error::InvalidArgument("row index out of range".into()));
    }
    let mut grower = Grower { u, x, params: *params, rng, nodes: Vec::new() };
    let root = grower.grow(rows, 0);
    debug_assert_eq!(root, 0);
    Ok(FittedTree { nodes: grower.nodes, p: x.ncols() })
}

/// Fits a CART regression tree on the full sample.
pub fn fit_tree(
    u: &DVector<f64>,
    x: &DMatrix<f64>,
    params: &TreeParams,
    rng: &mut impl Rng,
) -> Result<FittedTree> {
    let rows: Vec<usize> = (0..x.nrows()).collect();
    fit_tree_on_rows(u, x, &rows, params, rng)
}

impl FittedTree {
    pub fn predict_row(&self, x: &DMatrix<f64>, i: usize) -> f64 {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    node = if x[(i, *feature)] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

impl Predictor for FittedTree {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(x.ncols(), self.p, "feature dimension mismatch");
        DVector::from_fn(x.nrows(), |i, _| self.predict_row(x, i))
    }
}
