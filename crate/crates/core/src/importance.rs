//! Permutation variable importance computed on the training data: the
//! relative increase in residual sum of squares (and in median absolute
//! loss) when one covariate column is permuted, plus rank summaries.
//! A standard out-of-bag forest importance is provided as a comparison
//! baseline.

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::EnvDataset;
use crate::error::{Error, Result};
use crate::learners::{FittedForest, Predictor};

/// Per-variable importance values and ranks (rank 1 = lowest priority,
/// rank p = highest).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceReport {
    /// Relative RSS increase per variable.
    pub imp_rss: Vec<f64>,
    /// Relative median-absolute-loss increase per variable.
    pub imp_med: Vec<f64>,
    pub rank_rss: Vec<usize>,
    pub rank_med: Vec<usize>,
    pub seed: u64,
    pub repetitions: usize,
}

/// Ranks by ascending value; rank 1 is the smallest. Ties break by
/// variable index.
pub fn ranks_ascending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("finite importance values")
            .then(a.cmp(&b))
    });
    let mut ranks = vec![0usize; values.len()];
    for (k, &j) in order.iter().enumerate() {
        ranks[j] = k + 1;
    }
    ranks
}

fn median_abs(values: &mut [f64]) -> f64 {
    for v in values.iter_mut() {
        *v = v.abs();
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite residuals"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn losses(y: &DVector<f64>, pred: &DVector<f64>) -> (f64, f64) {
    let n = y.len() as f64;
    let resid = y - pred;
    let rss = resid.norm_squared() / n;
    let mut abs: Vec<f64> = resid.iter().cloned().collect();
    (rss, median_abs(&mut abs))
}

/// Core computation with an injectable permutation source; `next_perm`
/// receives (repetition, variable) and returns the row permutation to
/// apply to that column.
pub(crate) fn importance_with_perms(
    predictor: &dyn Predictor,
    data: &EnvDataset,
    repetitions: usize,
    mut next_perm: impl FnMut(usize, usize) -> Vec<usize>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = data.n();
    let p = data.p();
    if n < 2 {
        return Err(Error::InvalidArgument("importance needs at least 2 rows".into()));
    }
    if repetitions == 0 {
        return Err(Error::InvalidArgument("repetitions must be at least 1".into()));
    }
    let (base_rss, base_med) = losses(&data.y, &predictor.predict(&data.x));
    if base_rss == 0.0 || base_med == 0.0 {
        return Err(Error::InvalidArgument(
            "zero baseline loss; importance undefined".into(),
        ));
    }
    let mut imp_rss = vec![0.0f64; p];
    let mut imp_med = vec![0.0f64; p];
    let mut x = data.x.clone();
    for rep in 0..repetitions {
        for j in 0..p {
            let perm = next_perm(rep, j);
            for i in 0..n {
                x[(i, j)] = data.x[(perm[i], j)];
            }
            let (rss, med) = losses(&data.y, &predictor.predict(&x));
            imp_rss[j] += (rss - base_rss) / base_rss;
            imp_med[j] += (med - base_med) / base_med;
            x.column_mut(j).copy_from(&data.x.column(j));
        }
    }
    let rf = repetitions as f64;
    imp_rss.iter_mut().for_each(|v| *v /= rf);
    imp_med.iter_mut().for_each(|v| *v /= rf);
    Ok((imp_rss, imp_med))
}

/// Training-data permutation importance: for each variable, column j is
/// permuted (a fresh uniform permutation per repetition) and the relative
/// increase in mean squared error and in median absolute error recorded,
/// averaged over `repetitions`.
pub fn permutation_importance(
    predictor: &dyn Predictor,
    data: &EnvDataset,
    repetitions: usize,
    seed: u64,
) -> Result<ImportanceReport> {
    let n = data.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (imp_rss, imp_med) = importance_with_perms(predictor, data, repetitions, |_, _| {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        perm
    })?;
    Ok(ImportanceReport {
        rank_rss: ranks_ascending(&imp_rss),
        rank_med: ranks_ascending(&imp_med),
        imp_rss,
        imp_med,
        seed,
        repetitions,
    })
}

/// Breiman-style out-of-bag forest importance: per tree, the increase in
/// mean squared error on its out-of-bag rows when column j is permuted
/// among those rows, averaged over trees. Comparison baseline for the
/// training-data measure above.
pub fn oob_forest_importance(
    forest: &FittedForest,
    data: &EnvDataset,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = data.n();
    let p = data.p();
    if n < 2 {
        return Err(Error::InvalidArgument("importance needs at least 2 rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut imp = vec![0.0f64; p];
    let mut used_trees = vec![0usize; p];
    let mut in_bag = vec![false; n];
    let mut x = data.x.clone();
    for (tree, bag) in forest.trees().iter().zip(forest.bags()) {
        in_bag.iter_mut().for_each(|b| *b = false);
        for &i in bag {
            in_bag[i] = true;
        }
        let oob: Vec<usize> = (0..n).filter(|&i| !in_bag[i]).collect();
        if oob.len() < 2 {
            continue;
        }
        let base: f64 = oob
            .iter()
            .map(|&i| (data.y[i] - tree.predict_row(&data.x, i)).powi(2))
            .sum::<f64>()
            / oob.len() as f64;
        for j in 0..p {
            let mut perm = oob.clone();
            perm.shuffle(&mut rng);
            for (&i, &src) in oob.iter().zip(&perm) {
                x[(i, j)] = data.x[(src, j)];
            }
            let err: f64 = oob
                .iter()
                .map(|&i| (data.y[i] - tree.predict_row(&x, i)).powi(2))
                .sum::<f64>()
                / oob.len() as f64;
            imp[j] += err - base;
            used_trees[j] += 1;
            for &i in &oob {
                x[(i, j)] = data.x[(i, j)];
            }
        }
    }
    for j in 0..p {
        if used_trees[j] > 0 {
            imp[j] /= used_trees[j] as f64;
        }
    }
    Ok(imp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{fit_forest, fit_tree, LearnerKind, LearnerSpec, TreeParams};
    use nalgebra::DMatrix;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    struct MeanOnly(f64);

    impl Predictor for MeanOnly {
        fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
            DVector::from_element(x.nrows(), self.0)
        }
    }

    fn dataset(rng: &mut impl Rng, n: usize, p: usize) -> EnvDataset {
        let x = DMatrix::from_fn(n, p, |_, _| randn(rng));
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)] + 0.3 * randn(rng));
        EnvDataset::new(y, x, DMatrix::zeros(n, 1), None).unwrap()
    }

    #[test]
    fn identity_permutation_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(120);
        let data = dataset(&mut rng, 50, 3);
        let predictor = MeanOnly(0.5);
        let (imp_rss, imp_med) =
            importance_with_perms(&predictor, &data, 2, |_, _| (0..50).collect()).unwrap();
        assert!(imp_rss.iter().all(|&v| v == 0.0));
        assert!(imp_med.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mean_only_predictor_gives_zero_everywhere() {
        // Y independent of X and the predictor ignores X entirely.
        let mut rng = ChaCha8Rng::seed_from_u64(121);
        let x = DMatrix::from_fn(60, 4, |_, _| randn(&mut rng));
        let y = DVector::from_fn(60, |_, _| randn(&mut rng));
        let data = EnvDataset::new(y, x, DMatrix::zeros(60, 1), None).unwrap();
        let report = permutation_importance(&MeanOnly(0.0), &data, 3, 7).unwrap();
        assert!(report.imp_rss.iter().all(|&v| v == 0.0));
        assert!(report.imp_med.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unused_variable_has_zero_importance() {
        let mut rng = ChaCha8Rng::seed_from_u64(122);
        let data = dataset(&mut rng, 100, 3);
        // A shallow tree on x1 alone never touches the other columns.
        let params = TreeParams { max_depth: Some(2), min_leaf: 5, mtry: 3 };
        let mut tree_rng = ChaCha8Rng::seed_from_u64(0);
        let mut x1 = DMatrix::zeros(100, 3);
        x1.column_mut(0).copy_from(&data.x.column(0));
        let tree = fit_tree(&data.y, &x1, &params, &mut tree_rng).unwrap();
        let report = permutation_importance(&tree, &data, 2, 9).unwrap();
        assert_eq!(report.imp_rss[1], 0.0);
        assert_eq!(report.imp_rss[2], 0.0);
        assert!(report.imp_rss[0] > 0.0);
        // The informative variable outranks the unused ones.
        assert_eq!(report.rank_rss[0], 3);
    }

    #[test]
    fn importance_bounded_below_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let data = dataset(&mut rng, 120, 4);
        let spec = LearnerSpec::new(LearnerKind::Forest).with_seed(2);
        let forest = fit_forest(&data.y, &data.x, &spec).unwrap();
        let r1 = permutation_importance(&forest, &data, 2, 11).unwrap();
        let r2 = permutation_importance(&forest, &data, 2, 11).unwrap();
        assert_eq!(r1.imp_rss, r2.imp_rss);
        assert_eq!(r1.rank_med, r2.rank_med);
        assert!(r1.imp_rss.iter().all(|&v| v >= -1.0));
        assert!(r1.imp_med.iter().all(|&v| v >= -1.0));

        let mut sorted = r1.rank_rss.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2, 3, 4]);
    }

    #[test]
    fn ranks_ascending_breaks_ties_by_index() {
        assert_eq!(ranks_ascending(&[0.5, 0.1, 0.5, 0.9]), vec![2, 1, 3, 4]);
        assert_eq!(ranks_ascending(&[0.0, 0.0]), vec![1, 2]);
    }

    #[test]
    fn oob_importance_identifies_signal_variable() {
        let mut rng = ChaCha8Rng::seed_from_u64(124);
        let data = dataset(&mut rng, 200, 4);
        let mut spec = LearnerSpec::new(LearnerKind::Forest).with_seed(3);
        spec.n_trees = 60;
        let forest = fit_forest(&data.y, &data.x, &spec).unwrap();
        let imp = oob_forest_importance(&forest, &data, 13).unwrap();
        let ranks = ranks_ascending(&imp);
        assert_eq!(ranks[0], 4, "{imp:?}");
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let data = EnvDataset::new(
            DVector::from_vec(vec![1.0]),
            DMatrix::from_element(1, 2, 0.0),
            DMatrix::zeros(1, 1),
            None,
        )
        .unwrap();
        assert!(permutation_importance(&MeanOnly(0.0), &data, 1, 0).is_err());
    }
}
