//! End-to-end acceptance checks for the toolkit: limiting-case reductions,
//! the duality between worst-case shift risk and the regularized objective,
//! the gamma/quantile correspondence, ICP coverage, the desk-scale
//! replications of the linear illustration, the gain table and the variable
//! importance comparison, boosting convergence against the closed-form
//! linear fit, residual invariance under discrete anchors and the
//! calibration of the invariance test. One test per criterion.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use anchorlab::anchor::fit_anchor;
use anchorlab::boost::{boost_fit, BoostConfig};
use anchorlab::data::{EnvDataset, EnvironmentPartition, SubsetS};
use anchorlab::eval::{
    gain_cell_plan, run_experiment, run_importance_experiment, top_rank_frequency,
    verify_duality, verify_icp_coverage, verify_quantile_link, ExperimentPlan, MethodSpec,
};
use anchorlab::invariance::{test_invariance, TestMode};
use anchorlab::learners::{LearnerKind, LearnerSpec};
use anchorlab::numerics::chi2_quantile;
use anchorlab::sim::{generate, replicate_rng, LinearSem, ModelKind, PerturbationKind};

fn randn(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn report(criterion: &str, detail: String) {
    println!("acceptance {criterion}: pass ({detail})");
}

/// Hat matrix A (A^T A)^{-1} A^T applied to a matrix, built independently
/// of the library's projector.
fn project_onto(a: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    let ata = a.transpose() * a;
    let sol = ata
        .cholesky()
        .expect("anchor gram matrix should be positive definite")
        .solve(&(a.transpose() * m));
    a * sol
}

/// Least squares through the normal equations, independent of the
/// library's SVD-based solver.
fn ols_oracle(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let xtx = x.transpose() * x;
    xtx.cholesky()
        .expect("design should be full rank")
        .solve(&(x.transpose() * y))
}

/// Column-centered random problem with anchors that drive the covariates,
/// plus hidden confounding so that OLS and 2SLS genuinely differ.
fn random_iv_problem(rng: &mut impl Rng, n: usize, p: usize, r: usize) -> EnvDataset {
    let a = DMatrix::from_fn(n, r, |_, _| randn(rng));
    let gamma_load = DMatrix::from_fn(r, p, |_, _| randn(rng));
    let beta = DVector::from_fn(p, |_, _| randn(rng));
    let h = DVector::from_fn(n, |_, _| randn(rng));
    let mut x = &a * &gamma_load;
    for j in 0..p {
        for i in 0..n {
            x[(i, j)] += h[i] + 0.5 * randn(rng);
        }
    }
    let mut y = &x * &beta;
    for i in 0..n {
        y[i] += 2.0 * h[i] + 0.5 * randn(rng);
    }
    let mut data = EnvDataset::new(y, x, a, None).unwrap();
    data = data.center().0;
    data
}

#[test]
fn criterion_01_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (n, p, r) = (200, 3, 4);
    let mut max_ols = 0.0f64;
    let mut max_tsls = 0.0f64;
    let mut max_resid = 0.0f64;
    for _ in 0..100 {
        let data = random_iv_problem(&mut rng, n, p, r);

        let ols_beta = ols_oracle(&data.x, &data.y);
        let fit = fit_anchor(&data, 1.0, None).unwrap();
        max_ols = max_ols.max((&fit.beta - &ols_beta).amax());

        let x_hat = project_onto(&data.a, &data.x);
        let tsls = ols_oracle(&x_hat, &data.y);
        let fit = fit_anchor(&data, 1e8, None).unwrap();
        max_tsls = max_tsls.max((&fit.beta - &tsls).norm() / tsls.norm());

        let y_mat = DMatrix::from_column_slice(n, 1, data.y.as_slice());
        let x_res = &data.x - project_onto(&data.a, &data.x);
        let y_res = data.y.clone() - project_onto(&data.a, &y_mat).column(0);
        let resid_beta = ols_oracle(&x_res, &y_res);
        let fit = fit_anchor(&data, 0.0, None).unwrap();
        max_resid = max_resid.max((&fit.beta - &resid_beta).amax());
    }
    assert!(max_ols < 1e-8, "gamma=1 vs OLS: {max_ols:.3e}");
    assert!(max_tsls < 1e-3, "gamma=1e8 vs 2SLS: {max_tsls:.3e}");
    assert!(max_resid < 1e-8, "gamma=0 vs residualized OLS: {max_resid:.3e}");
    report(
        "criterion 1 (reductions)",
        format!("ols {max_ols:.2e}, 2sls {max_tsls:.2e}, residualized {max_resid:.2e}"),
    );
}

#[test]
fn criterion_02_duality() {
    let mut rng = replicate_rng(202, 0);
    let sem = LinearSem::random_acyclic(3, 1, 2, &mut rng);
    let max_rel =
        verify_duality(&sem, &[0.0, 0.5, 1.0, 5.0, 7.0, 20.0], 50, 202).unwrap();
    assert!(max_rel < 1e-6, "duality discrepancy {max_rel:.3e}");
    report("criterion 2 (duality)", format!("max relative discrepancy {max_rel:.2e}"));
}

#[test]
fn criterion_03_quantile_link() {
    let q = chi2_quantile(0.9918, 1.0).unwrap();
    assert!((q - 7.0).abs() <= 0.05, "chi2 quantile {q}");
    let link = verify_quantile_link(7.0, 100_000, 303).unwrap();
    assert!(
        link.relative_error < 0.05,
        "quantile link relative error {:.4}",
        link.relative_error
    );
    report(
        "criterion 3 (quantile link)",
        format!("chi2(0.9918) = {q:.4}, MC relative error {:.3}", link.relative_error),
    );
}

#[test]
fn criterion_04_icp_coverage() {
    let replicates = 200;
    let alpha = 0.05;
    let rep = verify_icp_coverage(replicates, alpha, 2.0, 150, 404).unwrap();
    let se = (alpha * (1.0 - alpha) / replicates as f64).sqrt();
    let threshold = 1.0 - alpha - 3.0 * se;
    assert!(
        rep.coverage >= threshold,
        "coverage {:.4} below {threshold:.4}",
        rep.coverage
    );
    report(
        "criterion 4 (icp coverage)",
        format!("coverage {:.3} >= {threshold:.3}", rep.coverage),
    );
}

#[test]
fn criterion_05_linear_illustration() {
    let methods = vec![MethodSpec::Ols, MethodSpec::AnchorOls { gamma: 7.0, lambda: None }];
    let plan = ExperimentPlan::new(
        ModelKind::LinearIllustration,
        PerturbationKind::Sqrt10Amplify,
        methods.clone(),
        20,
        505,
    );
    let result = run_experiment(&plan).unwrap();
    let rep = &result.report;
    for (k, &alpha) in rep.alphas.iter().enumerate() {
        if alpha >= 0.7 - 1e-9 {
            assert!(
                rep.mean_quantiles[1][k] < rep.mean_quantiles[0][k],
                "anchor not below OLS at alpha {alpha}"
            );
        }
    }

    let plan_none = ExperimentPlan::new(
        ModelKind::LinearIllustration,
        PerturbationKind::None,
        methods,
        20,
        505,
    );
    let result_none = run_experiment(&plan_none).unwrap();
    // Per-replicate gain: mean over the alpha grid of the relative gain of
    // anchor regression over OLS.
    let gains: Vec<f64> = result_none
        .report
        .per_replicate
        .iter()
        .map(|curves| {
            let mut g = 0.0;
            for k in 0..curves[0].len() {
                g += 100.0 * (curves[0][k] - curves[1][k]) / curves[0][k];
            }
            g / curves[0].len() as f64
        })
        .collect();
    let m = gains.iter().sum::<f64>() / gains.len() as f64;
    let var = gains.iter().map(|g| (g - m).powi(2)).sum::<f64>() / (gains.len() - 1) as f64;
    let se = (var / gains.len() as f64).sqrt();
    assert!(m <= se, "unperturbed mean gain {m:.3} exceeds 1 SE {se:.3}");
    report(
        "criterion 5 (linear illustration)",
        format!("anchor below OLS for alpha >= 0.7; unperturbed gain {m:.2} <= 1 SE {se:.2}"),
    );
}

#[test]
fn criterion_06_gain_table_bands() {
    let seed = 606;
    let reps = 20;

    let run = |model, pert, kind| {
        let plan = gain_cell_plan(model, pert, kind, 7.0, reps, seed);
        run_experiment(&plan).unwrap().gains.rows[0].gains
    };

    let g = run(ModelKind::M1, PerturbationKind::ModerateShift, LearnerKind::Forest);
    let target = [23.2, 22.3, 16.7];
    for k in 0..3 {
        assert!(g[k] > 0.0, "M1/moderate/RF gain {k} not positive: {:?}", g);
        assert!((g[k] - target[k]).abs() <= 10.0, "M1/moderate/RF off band: {:?}", g);
    }
    let g_rf = g;

    let g = run(ModelKind::M1, PerturbationKind::ModerateShift, LearnerKind::LmRf);
    let target = [23.5, 22.7, 18.3];
    for k in 0..3 {
        assert!(g[k] > 0.0, "M1/moderate/LM+RF gain {k} not positive: {:?}", g);
        assert!((g[k] - target[k]).abs() <= 10.0, "M1/moderate/LM+RF off band: {:?}", g);
    }
    let g_lmrf = g;

    let g = run(ModelKind::M2, PerturbationKind::StrongShift, LearnerKind::Forest);
    assert!(g[0] < 0.0, "M2/strong/RF gain at alpha 0.5 not negative: {:?}", g);
    let g_m2rf = g[0];

    let g = run(ModelKind::M2, PerturbationKind::StrongShift, LearnerKind::LmRf);
    assert!(g[0] > 40.0, "M2/strong/LM+RF gain at alpha 0.5 not above 40: {:?}", g);
    report(
        "criterion 6 (gain table bands)",
        format!(
            "M1/mod/RF {g_rf:.1?}, M1/mod/LM+RF {g_lmrf:.1?}, M2/str/RF {g_m2rf:.1}, M2/str/LM+RF {:.1}",
            g[0]
        ),
    );
}

#[test]
fn criterion_07_boosting_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    for problem in 0..10 {
        let seed: u64 = rng.gen();
        let (data, _) = generate(ModelKind::LinearIllustration, 200, seed).unwrap();
        let data = data.center().0;
        for &gamma in &[1.0, 7.0] {
            let mut config =
                BoostConfig::new(gamma, LearnerSpec::new(LearnerKind::Linear).with_seed(0));
            config.nu = 0.25;
            config.max_iter = 400;
            let fit = boost_fit(&data, &config).unwrap();
            let anchor = fit_anchor(&data, gamma, None).unwrap();
            let target = &data.x * &anchor.beta;
            let pred = fit.predict_at(&data.x, config.max_iter);
            let rel = (pred - &target).norm() / target.norm();
            assert!(rel < 1e-3, "problem {problem}, gamma {gamma}: relative gap {rel:.2e}");
        }
    }
    report("criterion 7 (boosting convergence)", "10 problems, gamma in {1, 7}".into());
}

#[test]
fn criterion_08_discrete_residual_invariance() {
    let (data, _) = generate(ModelKind::M2Discr, 300, 808).unwrap();
    let labels = data.env_labels.clone().unwrap();
    let data = data.center().0;
    let mut spec = LearnerSpec::new(LearnerKind::LmRf).with_seed(808);
    spec.n_trees = 30;
    let mut config = BoostConfig::new(100.0, spec);
    config.nu = 0.01;
    config.max_iter = 200;
    let fit = boost_fit(&data, &config).unwrap();
    let resid = &data.y - fit.predict_at(&data.x, config.max_iter);

    let mut stats = Vec::new();
    for env in [1usize, 2] {
        let vals: Vec<f64> = resid
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l == env)
            .map(|(&v, _)| v)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        stats.push((mean, var / n));
    }
    let diff = (stats[0].0 - stats[1].0).abs();
    let se = (stats[0].1 + stats[1].1).sqrt();
    assert!(diff < 3.0 * se, "block mean gap {diff:.4} vs 3 SE {:.4}", 3.0 * se);
    report(
        "criterion 8 (discrete residual invariance)",
        format!("block mean gap {diff:.4} < 3 SE {:.4}", 3.0 * se),
    );
}

#[test]
fn criterion_09_importance_ranks() {
    let ranks = run_importance_experiment(100, 7.0, 300, 909).unwrap();
    let freq_rss = top_rank_frequency(&ranks.rank_rss, &[2, 3]);
    let freq_oob = top_rank_frequency(&ranks.rank_oob, &[2, 3]);
    assert!(freq_rss > 0.6, "imp_rss top-2 frequency {freq_rss:.3}");
    assert!(
        freq_rss > freq_oob,
        "imp_rss {freq_rss:.3} not above OOB baseline {freq_oob:.3}"
    );
    report(
        "criterion 9 (importance ranks)",
        format!("imp_rss {freq_rss:.2} > 0.6 and > oob {freq_oob:.2}"),
    );
}

#[test]
fn criterion_10_test_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let reps = 500;
    let alpha = 0.05;
    let (n_per, p) = (150, 2);
    let mut rejections = 0;
    for _ in 0..reps {
        let n = 2 * n_per;
        let x = DMatrix::from_fn(n, p, |_, _| randn(&mut rng));
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] - 0.5 * x[(i, 1)] + randn(&mut rng));
        let labels: Vec<usize> = (0..n).map(|i| if i < n_per { 1 } else { 2 }).collect();
        let a = DMatrix::zeros(n, 1);
        let data = EnvDataset::new(y, x, a, Some(labels.clone())).unwrap();
        let part = EnvironmentPartition::from_labels(&labels, 2).unwrap();
        let s = SubsetS::new(vec![1, 2], p).unwrap();
        let res = test_invariance(&data, &s, &part, TestMode::Combined).unwrap();
        if !res.accepted_at(alpha) {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / reps as f64;
    let half = 2.576 * (alpha * (1.0 - alpha) / reps as f64).sqrt();
    assert!(
        (rate - alpha).abs() <= half,
        "rejection rate {rate:.4} outside {alpha} +- {half:.4}"
    );
    report(
        "criterion 10 (test calibration)",
        format!("null rejection rate {rate:.3} within {alpha} +- {half:.3}"),
    );
}
