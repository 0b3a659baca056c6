use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::tree::{fit_tree_on_rows, FittedTree};
use super::{LearnerSpec, Predictor};
use crate::error::Result;

/// RNG stream for one tree, derived from (seed, tree index) so changing
/// n_trees never reshuffles earlier trees.
pub(crate) fn tree_rng(seed: u64, tree_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree_index.wrapping_add(1));
    rng
}

/// A fitted Random Forest: bootstrap CART trees with per-split feature
/// subsampling, averaged in tree-index order.
pub struct FittedForest {
    trees: Vec<FittedTree>,
    bags: Vec<Vec<usize>>,
    oob: DVector<f64>,
    oob_counts: Vec<usize>,
    p: usize,
}

fn fit_with_rows(
    u: &DVector<f64>,
    x: &DMatrix<f64>,
    spec: &LearnerSpec,
    rows_per_tree: Vec<Vec<usize>>,
    rngs: Vec<ChaCha8Rng>,
) -> Result<FittedForest> {
    let n = x.nrows();
    let p = x.ncols();
    let params = spec.tree_params(p, true);
    let trees: Vec<FittedTree> = rows_per_tree
        .par_iter()
        .zip(rngs)
        .map(|(rows, mut rng)| fit_tree_on_rows(u, x, rows, &params, &mut rng))
        .collect::<Result<Vec<_>>>()?;

    // Out-of-bag predictions: for each row, average the trees whose
    // bootstrap sample missed it.
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    let mut in_bag = vec![false; n];
    for (tree, rows) in trees.iter().zip(&rows_per_tree) {
        in_bag.iter_mut().for_each(|b| *b = false);
        for &i in rows {
            in_bag[i] = true;
        }
        for i in 0..n {
            if !in_bag[i] {
                sums[i] += tree.predict_row(x, i);
                counts[i] += 1;
            }
        }
    }
    let oob = DVector::from_fn(n, |i, _| {
        if counts[i] > 0 {
            sums[i] / counts[i] as f64
        } else {
            f64::NAN
        }
    });
    Ok(FittedForest { trees, bags: rows_per_tree, oob, oob_counts: counts, p })
}

pub fn fit_forest(u: &DVector<f64>, x: &DMatrix<f64>, spec: &LearnerSpec) -> Result<FittedForest> {
    spec.validate(x.ncols())?;
    let n = x.nrows();
    let mut rows_per_tree = Vec::with_capacity(spec.n_trees);
    let mut rngs = Vec::with_capacity(spec.n_trees);
    for t in 0..spec.n_trees {
        let mut rng = tree_rng(spec.seed, t as u64);
        let rows: Vec<usize> = if spec.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        rows_per_tree.push(rows);
        rngs.push(rng);
    }
    fit_with_rows(u, x, spec, rows_per_tree, rngs)
}

/// Test hook: fits with explicit per-tree row samples so bootstrap draws
/// can be replayed by row identity under a permutation of the data.
#[cfg(test)]
pub(crate) fn fit_forest_replayed(
    u: &DVector<f64>,
    x: &DMatrix<f64>,
    spec: &LearnerSpec,
    rows_per_tree: Vec<Vec<usize>>,
) -> Result<FittedForest> {
    let rngs = (0..rows_per_tree.len())
        .map(|t| tree_rng(spec.seed, t as u64))
        .collect();
    fit_with_rows(u, x, spec, rows_per_tree, rngs)
}

impl FittedForest {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    /// Out-of-bag prediction per training row; NaN for rows that were in
    /// every bootstrap sample.
    pub fn oob_predictions(&self) -> &DVector<f64> {
        &self.oob
    }

    pub fn oob_counts(&self) -> &[usize] {
        &self.oob_counts
    }

    pub fn trees(&self) -> &[FittedTree] {
        &self.trees
    }

    /// Bootstrap row indices per tree, in tree-index order.
    pub fn bags(&self) -> &[Vec<usize>] {
        &self.bags
    }
}

impl Predictor for FittedForest {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(x.ncols(), self.p, "feature dimension mismatch");
        let mut out = DVector::zeros(x.nrows());
        for tree in &self.trees {
            out += tree.predict(x);
        }
        out / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_tree, LearnerKind};
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    fn forest_spec(seed: u64, n_trees: usize) -> LearnerSpec {
        let mut spec = LearnerSpec::new(LearnerKind::Forest).with_seed(seed);
        spec.n_trees = n_trees;
        spec
    }

    #[test]
    fn constant_response_predicts_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(90);
        let x = DMatrix::from_fn(50, 3, |_, _| randn(&mut rng));
        let u = DVector::from_element(50, -1.75);
        let forest = fit_forest(&u, &x, &forest_spec(1, 20)).unwrap();
        let pred = forest.predict(&DMatrix::from_fn(30, 3, |_, _| randn(&mut rng)));
        assert!(pred.iter().all(|&v| v == -1.75));
    }

    #[test]
    fn forest_beats_single_tree_on_smooth_function() {
        let mut wins = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 500;
            let x = DMatrix::from_fn(n, 1, |_, _| 3.0 * randn(&mut rng));
            let u = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.3 * randn(&mut rng));
            let mut spec = forest_spec(seed, 50);
            spec.mtry = Some(1);
            let forest = fit_forest(&u, &x, &spec).unwrap();
            let mut tree_rng_ = tree_rng(seed, 0);
            let params = spec.tree_params(1, false);
            let tree = fit_tree(&u, &x, &params, &mut tree_rng_).unwrap();

            let xt = DMatrix::from_fn(400, 1, |_, _| 3.0 * randn(&mut rng));
            let truth = DVector::from_fn(400, |i, _| xt[(i, 0)].sin());
            let ef = (forest.predict(&xt) - &truth).norm_squared();
            let et = (tree.predict(&xt) - &truth).norm_squared();
            if ef < et {
                wins += 1;
            }
        }
        // Median over the 20 seeds: the forest wins most of the time.
        assert!(wins > 10, "forest won only {wins}/20");
    }

    #[test]
    fn degenerate_forest_equals_single_tree() {
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let x = DMatrix::from_fn(80, 3, |_, _| randn(&mut rng));
        let u = DVector::from_fn(80, |i, _| x[(i, 1)] + 0.2 * randn(&mut rng));
        let mut spec = forest_spec(7, 1);
        spec.bootstrap = false;
        spec.mtry = Some(3);
        let forest = fit_forest(&u, &x, &spec).unwrap();
        let mut rng0 = tree_rng(7, 0);
        let tree = fit_tree(&u, &x, &spec.tree_params(3, true), &mut rng0).unwrap();
        let grid = DMatrix::from_fn(100, 3, |_, _| randn(&mut rng));
        assert_eq!(forest.predict(&grid), tree.predict(&grid));
    }

    #[test]
    fn same_seed_is_bit_identical_and_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(92);
        let x = DMatrix::from_fn(100, 4, |_, _| randn(&mut rng));
        let u = DVector::from_fn(100, |i, _| x[(i, 0)] * x[(i, 2)] + 0.1 * randn(&mut rng));
        let spec = forest_spec(5, 30);
        let grid = DMatrix::from_fn(50, 4, |_, _| randn(&mut rng));

        let f1 = fit_forest(&u, &x, &spec).unwrap();
        let f2 = fit_forest(&u, &x, &spec).unwrap();
        assert_eq!(f1.predict(&grid), f2.predict(&grid));

        let f3 = fit_forest(&(4.0 * &u), &x, &spec).unwrap();
        assert_eq!(4.0 * f1.predict(&grid), f3.predict(&grid));
    }

    #[test]
    fn replayed_bootstrap_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(93);
        let n = 60;
        let x = DMatrix::from_fn(n, 2, |_, _| randn(&mut rng));
        let u = DVector::from_fn(n, |i, _| x[(i, 0)].cos() + 0.05 * randn(&mut rng));
        // mtry = p so no split-level randomness; bootstrap rows drawn once
        // and replayed by row identity under the permutation.
        let mut spec = forest_spec(11, 15);
        spec.mtry = Some(2);
        let rows: Vec<Vec<usize>> = (0..15)
            .map(|_| (0..n).map(|_| rng.gen_range(0..n)).collect())
            .collect();
        let f1 = fit_forest_replayed(&u, &x, &spec, rows.clone()).unwrap();

        // Reverse permutation of the training rows.
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
        let up = DVector::from_fn(n, |i, _| u[perm[i]]);
        // Row identity i maps to position n-1-i in the permuted data.
        let rows_p: Vec<Vec<usize>> = rows
            .iter()
            .map(|r| r.iter().map(|&i| n - 1 - i).collect())
            .collect();
        let f2 = fit_forest_replayed(&up, &xp, &spec, rows_p).unwrap();

        let grid = DMatrix::from_fn(150, 2, |_, _| randn(&mut rng));
        assert_eq!(f1.predict(&grid), f2.predict(&grid));
    }

    #[test]
    fn oob_predictions_cover_rows_and_track_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(94);
        let n = 200;
        let x = DMatrix::from_fn(n, 2, |_, _| randn(&mut rng));
        let u = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] + 0.2 * randn(&mut rng));
        let forest = fit_forest(&u, &x, &forest_spec(3, 60)).unwrap();
        let oob = forest.oob_predictions();
        assert!(oob.iter().all(|v| v.is_finite()));
        assert!(forest.oob_counts().iter().all(|&c| c > 0));
        let oob_mse = (oob - &u).norm_squared() / n as f64;
        let var = u.iter().map(|v| (v - u.mean()).powi(2)).sum::<f64>() / n as f64;
        assert!(oob_mse < 0.5 * var, "oob mse {oob_mse} vs var {var}");
    }
}
