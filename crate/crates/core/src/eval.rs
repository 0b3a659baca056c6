//! Evaluation harness: out-of-sample quantile curves, relative-gain
//! tables, replicated simulation experiments, the duality / quantile-link
//! / ICP-coverage verification routines and CSV export.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anchor::{fit_anchor, insample_quantile_risk, worst_case_risk_oracle, ShiftClassSpec};
use crate::boost::{boost_fit, BoostConfig, StopRule};
use crate::data::{Centering, EnvDataset, EnvironmentPartition};
use crate::error::{Error, Result};
use crate::icp::{icp_search, IcpConfig};
use crate::importance::{oob_forest_importance, permutation_importance, ranks_ascending};
use crate::learners::{self, LearnerKind, LearnerSpec};
use crate::numerics::{empirical_quantile, ols, Projector};
use crate::sim::{
    gen_out_of_sample, generate, replicate_rng, LinearSem, ModelKind, PerturbationKind,
};

/// The default evaluation grid: 0.05, 0.10, ..., 1.00.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 * 0.05).collect()
}

/// Empirical alpha-quantiles of a sample of absolute errors.
pub fn quantile_curve(abs_errors: &[f64], alphas: &[f64]) -> Result<Vec<f64>> {
    if abs_errors.iter().any(|&e| e < 0.0) {
        return Err(Error::InvalidArgument("absolute errors must be nonnegative".into()));
    }
    alphas.iter().map(|&a| empirical_quantile(abs_errors, a)).collect()
}

/// Relative performance gain in percent: positive when the method beats
/// the baseline.
pub fn relative_gain(q_base: f64, q_method: f64) -> Result<f64> {
    if q_base <= 0.0 {
        return Err(Error::InvalidArgument(format!("baseline quantile {q_base} must be positive")));
    }
    Ok(100.0 * (q_base - q_method) / q_base)
}

/// A method evaluated in an experiment. The first method of a plan is the
/// baseline for gain computations.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodSpec {
    Ols,
    AnchorOls {
        gamma: f64,
        #[serde(default)]
        lambda: Option<f64>,
    },
    Learner {
        learner: LearnerSpec,
    },
    AnchorBoost {
        gamma: f64,
        learner: LearnerSpec,
        #[serde(default = "default_nu")]
        nu: f64,
        #[serde(default = "default_boost_iter")]
        max_iter: usize,
        #[serde(default = "default_stop_rule")]
        stop_rule: StopRule,
    },
}

fn default_nu() -> f64 {
    0.1
}

fn default_boost_iter() -> usize {
    300
}

fn default_stop_rule() -> StopRule {
    StopRule::Stop2
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Ols => "ols".into(),
            MethodSpec::AnchorOls { gamma, lambda: None } => format!("anchor_ols(gamma={gamma})"),
            MethodSpec::AnchorOls { gamma, lambda: Some(l) } => {
                format!("anchor_lasso(gamma={gamma},lambda={l})")
            }
            MethodSpec::Learner { learner } => learner.kind.name().into(),
            MethodSpec::AnchorBoost { gamma, learner, stop_rule, .. } => {
                format!("anchor_boost({},gamma={gamma},{stop_rule:?})", learner.kind.name())
                    .to_lowercase()
            }
        }
    }

    /// The anchor boosting method used in the replicated experiments:
    /// gamma with stop2 and deliberately weak stage forests (10 trees,
    /// min_leaf n/2 at n = 300). The weak stages matter: with deep stage
    /// trees the boosting path interpolates the training response and the
    /// stopping rules cannot recover the shift protection.
    pub fn boost_default(kind: LearnerKind, gamma: f64) -> Self {
        let mut learner = LearnerSpec::new(kind);
        learner.n_trees = 10;
        learner.min_leaf = 150;
        MethodSpec::AnchorBoost {
            gamma,
            learner,
            nu: default_nu(),
            max_iter: default_boost_iter(),
            stop_rule: StopRule::Stop2,
        }
    }
}

/// A replicated simulation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub model: ModelKind,
    pub perturbation: PerturbationKind,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_n_out")]
    pub n_out: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default = "default_alpha_grid")]
    pub alphas: Vec<f64>,
}

fn default_n() -> usize {
    300
}

fn default_n_out() -> usize {
    2000
}

impl ExperimentPlan {
    pub fn new(
        model: ModelKind,
        perturbation: PerturbationKind,
        methods: Vec<MethodSpec>,
        replicates: usize,
        seed: u64,
    ) -> Self {
        ExperimentPlan {
            model,
            perturbation,
            methods,
            n: default_n(),
            n_out: default_n_out(),
            replicates,
            seed,
            alphas: default_alpha_grid(),
        }
    }
}

/// The gain-table construction: anchor boosting at the given gamma with
/// stop2 against the corresponding plain base learner (the baseline).
pub fn gain_cell_plan(
    model: ModelKind,
    perturbation: PerturbationKind,
    kind: LearnerKind,
    gamma: f64,
    replicates: usize,
    seed: u64,
) -> ExperimentPlan {
    let plain = MethodSpec::Learner { learner: LearnerSpec::new(kind) };
    let boost = MethodSpec::boost_default(kind, gamma);
    ExperimentPlan::new(model, perturbation, vec![plain, boost], replicates, seed)
}

/// Mean quantile curves over replicates, with the per-replicate values
/// retained for export.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileReport {
    pub alphas: Vec<f64>,
    pub methods: Vec<String>,
    /// mean_quantiles[method][alpha].
    pub mean_quantiles: Vec<Vec<f64>>,
    /// per_replicate[replicate][method][alpha].
    pub per_replicate: Vec<Vec<Vec<f64>>>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainRow {
    pub model: String,
    pub perturbation: String,
    pub method: String,
    /// Gains in percent at alpha = 0.5, 0.8, 1.0 against the baseline.
    pub gains: [f64; 3],
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GainTable {
    pub baseline: String,
    pub rows: Vec<GainRow>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub report: QuantileReport,
    pub gains: GainTable,
}

fn center_test_x(x: &DMatrix<f64>, centering: &Centering) -> DMatrix<f64> {
    let mut out = x.clone();
    for j in 0..x.ncols() {
        for i in 0..x.nrows() {
            out[(i, j)] -= centering.x_means[j];
        }
    }
    out
}

/// Fits one method on the training data and predicts the test rows.
pub fn fit_predict_method(
    method: &MethodSpec,
    train: &EnvDataset,
    test_x: &DMatrix<f64>,
    seed: u64,
) -> Result<DVector<f64>> {
    match method {
        MethodSpec::Ols => {
            let (c, centering) = train.center();
            let beta = ols(&c.x, &c.y)?.beta;
            let xc = center_test_x(test_x, &centering);
            Ok(xc * beta + DVector::from_element(test_x.nrows(), centering.y_mean))
        }
        MethodSpec::AnchorOls { gamma, lambda } => {
            let (c, centering) = train.center();
            let fit = fit_anchor(&c, *gamma, *lambda)?;
            let xc = center_test_x(test_x, &centering);
            Ok(xc * fit.beta + DVector::from_element(test_x.nrows(), centering.y_mean))
        }
        MethodSpec::Learner { learner } => {
            let mut spec = learner.clone();
            spec.seed = seed;
            let fitted = learners::fit(&spec, &train.y, &train.x)?;
            Ok(fitted.predict(test_x))
        }
        MethodSpec::AnchorBoost { gamma, learner, nu, max_iter, stop_rule } => {
            let (c, centering) = train.center();
            let mut spec = learner.clone();
            spec.seed = seed;
            let mut config = BoostConfig::new(*gamma, spec);
            config.nu = *nu;
            config.max_iter = *max_iter;
            config.stop_rule = *stop_rule;
            let fit = boost_fit(&c, &config)?;
            let xc = center_test_x(test_x, &centering);
            Ok(fit.predict(&xc) + DVector::from_element(test_x.nrows(), centering.y_mean))
        }
    }
}

fn alpha_index(alphas: &[f64], target: f64) -> Result<usize> {
    alphas
        .iter()
        .position(|&a| (a - target).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidArgument(format!("alpha grid lacks {target}")))
}

/// Runs the replicated experiment: per replicate, draw a training sample
/// and a perturbed out-of-sample set, fit every method and record the
/// absolute-error quantile curves. Replicates run in parallel on
/// independent RNG streams; aggregation is by replicate index.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    if plan.replicates == 0 || plan.methods.is_empty() {
        return Err(Error::InvalidArgument("plan needs replicates and methods".into()));
    }
    let per_replicate: Vec<Vec<Vec<f64>>> = (0..plan.replicates)
        .into_par_iter()
        .map(|rep| -> Result<Vec<Vec<f64>>> {
            let mut rng = replicate_rng(plan.seed, rep as u64);
            let train_seed: u64 = rng.gen();
            let test_seed: u64 = rng.gen();
            let (train, spec) = generate(plan.model, plan.n, train_seed)?;
            let test = gen_out_of_sample(&spec, plan.perturbation, plan.n_out, test_seed)?;
            let mut curves = Vec::with_capacity(plan.methods.len());
            for method in &plan.methods {
                let method_seed: u64 = rng.gen();
                let pred = fit_predict_method(method, &train, &test.x, method_seed)?;
                let abs: Vec<f64> = (&test.y - pred).iter().map(|e| e.abs()).collect();
                curves.push(quantile_curve(&abs, &plan.alphas)?);
            }
            Ok(curves)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_methods = plan.methods.len();
    let n_alphas = plan.alphas.len();
    let mut mean_quantiles = vec![vec![0.0f64; n_alphas]; n_methods];
    for rep in &per_replicate {
        for (m, curve) in rep.iter().enumerate() {
            for (k, &v) in curve.iter().enumerate() {
                mean_quantiles[m][k] += v;
            }
        }
    }
    for row in &mut mean_quantiles {
        for v in row.iter_mut() {
            *v /= plan.replicates as f64;
        }
    }

    let methods: Vec<String> = plan.methods.iter().map(|m| m.label()).collect();
    let report = QuantileReport {
        alphas: plan.alphas.clone(),
        methods: methods.clone(),
        mean_quantiles,
        per_replicate,
        replicates: plan.replicates,
        seed: plan.seed,
    };

    let idx = [
        alpha_index(&plan.alphas, 0.5)?,
        alpha_index(&plan.alphas, 0.8)?,
        alpha_index(&plan.alphas, 1.0)?,
    ];
    let mut gains = GainTable { baseline: methods[0].clone(), rows: Vec::new() };
    for m in 1..n_methods {
        let mut g = [0.0f64; 3];
        for (slot, &k) in idx.iter().enumerate() {
            g[slot] = relative_gain(report.mean_quantiles[0][k], report.mean_quantiles[m][k])?;
        }
        gains.rows.push(GainRow {
            model: plan.model.name().into(),
            perturbation: format!("{:?}", plan.perturbation).to_lowercase(),
            method: methods[m].clone(),
            gains: g,
        });
    }
    Ok(ExperimentResult { report, gains })
}

/// Checks the duality theorem numerically: for random coefficient vectors
/// and the given gammas, compares the analytic worst-case shift risk with
/// the population regularized risk computed from the SEM covariances by an
/// independent route. Returns the maximum relative discrepancy.
pub fn verify_duality(sem: &LinearSem, gammas: &[f64], trials: usize, seed: u64) -> Result<f64> {
    let inv = sem.i_minus_b_inverse()?;
    let d = sem.dim();
    let sigma_eps = DMatrix::from_diagonal(&sem.noise_sd.map(|s| s * s));
    // Cov of the stacked variables Z = (I-B)^-1 (eps + M A).
    let cov_z = &inv * (&sigma_eps + &sem.m * &sem.sigma_a * sem.m.transpose()) * inv.transpose();
    let cov_za = &inv * &sem.m * &sem.sigma_a;
    let sigma_a_inv = sem
        .sigma_a
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("sigma_a singular".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..trials {
        let b = DVector::from_fn(sem.p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let gamma = gammas[rng.gen_range(0..gammas.len())];

        let shift = ShiftClassSpec::new(gamma, sem.m.clone(), sem.sigma_a.clone())?;
        let oracle = worst_case_risk_oracle(sem, &b, &shift)?;

        // Population regularized risk via the covariance algebra:
        // E[((I-P_A) R)^2] + gamma E[(P_A R)^2] for R = Y - X^T b.
        let mut s = DVector::zeros(d);
        s[sem.y_index()] = 1.0;
        for j in 0..sem.p {
            s[j] = -b[j];
        }
        let var_r = (s.transpose() * &cov_z * &s)[(0, 0)];
        let cov_ra = (s.transpose() * &cov_za).transpose();
        let alpha = &sigma_a_inv * cov_ra;
        let proj = (alpha.transpose() * &sem.sigma_a * &alpha)[(0, 0)];
        let population = (var_r - proj) + gamma * proj;

        let rel = (oracle - population).abs() / population.abs().max(1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub coverage: f64,
    pub empty_fraction: f64,
    pub replicates: usize,
    pub alpha: f64,
}

/// Linear SEM with pa(Y) = {2, 3} and two environments; the second shifts
/// the covariate means. `shift = 0` makes the environments uninformative.
fn coverage_sem(rng: &mut impl Rng, n_per: usize, shift: f64) -> (EnvDataset, EnvironmentPartition) {
    let p = 4;
    let n = 2 * n_per;
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let env2 = i >= n_per;
        let mu = if env2 { shift } else { 0.0 };
        for j in 0..p {
            x[(i, j)] = mu * (1.0 + j as f64 * 0.3) + rng.sample::<f64, _>(StandardNormal);
        }
        y[i] = 1.5 * x[(i, 1)] - 2.0 * x[(i, 2)]
            + 0.5 * rng.sample::<f64, _>(StandardNormal);
        x[(i, 3)] = 0.8 * y[i] + 0.5 * rng.sample::<f64, _>(StandardNormal);
        labels.push(if env2 { 2 } else { 1 });
    }
    let a = DMatrix::zeros(n, 1);
    let data = EnvDataset::new(y, x, a, Some(labels.clone())).expect("finite draw");
    let part = EnvironmentPartition::from_labels(&labels, 2).expect("two groups");
    (data, part)
}

/// Monte Carlo check of the ICP coverage guarantee P[S_hat subset of
/// pa(Y)] >= 1 - alpha on a two-environment linear SEM with known
/// parents {2, 3}.
pub fn verify_icp_coverage(
    replicates: usize,
    alpha: f64,
    shift: f64,
    n_per_env: usize,
    seed: u64,
) -> Result<CoverageReport> {
    if replicates == 0 {
        return Err(Error::InvalidArgument("replicates must be at least 1".into()));
    }
    let results: Vec<(bool, bool)> = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<(bool, bool)> {
            let mut rng = replicate_rng(seed, rep as u64);
            let (data, part) = coverage_sem(&mut rng, n_per_env, shift);
            let config = IcpConfig::new(alpha, data.p());
            let res = icp_search(&data, &part, &config)?;
            let covered = res.s_hat.iter().all(|&j| j == 2 || j == 3);
            Ok((covered, res.s_hat.is_empty()))
        })
        .collect::<Result<Vec<_>>>()?;
    let covered = results.iter().filter(|r| r.0).count();
    let empty = results.iter().filter(|r| r.1).count();
    Ok(CoverageReport {
        coverage: covered as f64 / replicates as f64,
        empty_fraction: empty as f64 / replicates as f64,
        replicates,
        alpha,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuantileLinkReport {
    pub insample_quantile: f64,
    pub regularized_risk: f64,
    pub relative_error: f64,
    pub gamma: f64,
    pub n: usize,
}

/// Monte Carlo check of the gamma/quantile correspondence on the Gaussian
/// linear illustration: the in-sample alpha-quantile of the conditional
/// risk at alpha matching gamma should equal the regularized risk.
pub fn verify_quantile_link(gamma: f64, n: usize, seed: u64) -> Result<QuantileLinkReport> {
    let alpha = crate::anchor::alpha_from_gamma(gamma)?;
    let (train, _) = generate(ModelKind::LinearIllustration, n, seed)?;
    let (c, _) = train.center();
    let fit = fit_anchor(&c, gamma, None)?;
    let projector = Projector::new(&c.a);
    let residuals = &c.y - &c.x * &fit.beta;
    let insample = insample_quantile_risk(&residuals, &projector, alpha)?;
    let regularized = fit.objective;
    Ok(QuantileLinkReport {
        insample_quantile: insample,
        regularized_risk: regularized,
        relative_error: (insample - regularized).abs() / regularized,
        gamma,
        n,
    })
}

/// Per-replicate importance ranks for the three variants of the rank
/// comparison: training-data RSS and median measures under anchor
/// boosting, and the standard out-of-bag forest baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceRanks {
    /// ranks[replicate][variable], rank p = highest priority.
    pub rank_rss: Vec<Vec<usize>>,
    pub rank_med: Vec<Vec<usize>>,
    pub rank_oob: Vec<Vec<usize>>,
    pub replicates: usize,
    pub seed: u64,
}

/// Fraction of replicates in which the 1-based `vars` occupy the top
/// |vars| ranks.
pub fn top_rank_frequency(ranks: &[Vec<usize>], vars: &[usize]) -> f64 {
    if ranks.is_empty() {
        return 0.0;
    }
    let p = ranks[0].len();
    let k = vars.len();
    let hits = ranks
        .iter()
        .filter(|r| vars.iter().all(|&j| r[j - 1] > p - k))
        .count();
    hits as f64 / ranks.len() as f64
}

/// The rank-distribution experiment on model M3: anchor boosting with the
/// LM+RF learner at the given gamma, training-data permutation importance
/// (both measures) against the standard out-of-bag forest importance.
pub fn run_importance_experiment(
    replicates: usize,
    gamma: f64,
    n: usize,
    seed: u64,
) -> Result<ImportanceRanks> {
    let rows: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = (0..replicates)
        .into_par_iter()
        .map(|rep| -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
            let mut rng = replicate_rng(seed, rep as u64);
            let train_seed: u64 = rng.gen();
            let boost_seed: u64 = rng.gen();
            let perm_seed: u64 = rng.gen();
            let forest_seed: u64 = rng.gen();
            let oob_seed: u64 = rng.gen();

            let (train, _) = generate(ModelKind::M3, n, train_seed)?;
            let (c, _) = train.center();
            let mut learner = LearnerSpec::new(LearnerKind::LmRf).with_seed(boost_seed);
            learner.n_trees = 10;
            learner.min_leaf = n / 2;
            let mut config = BoostConfig::new(gamma, learner);
            config.max_iter = default_boost_iter();
            config.stop_rule = StopRule::Stop2;
            let fit = boost_fit(&c, &config)?;
            let report = permutation_importance(&fit, &c, 1, perm_seed)?;

            let mut forest_spec = LearnerSpec::new(LearnerKind::Forest).with_seed(forest_seed);
            forest_spec.n_trees = 100;
            let forest = learners::fit_forest(&train.y, &train.x, &forest_spec)?;
            let oob_imp = oob_forest_importance(&forest, &train, oob_seed)?;
            Ok((report.rank_rss, report.rank_med, ranks_ascending(&oob_imp)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ImportanceRanks {
        rank_rss: Vec::with_capacity(replicates),
        rank_med: Vec::with_capacity(replicates),
        rank_oob: Vec::with_capacity(replicates),
        replicates,
        seed,
    };
    for (rss, med, oob) in rows {
        out.rank_rss.push(rss);
        out.rank_med.push(med);
        out.rank_oob.push(oob);
    }
    Ok(out)
}

/// Long-format CSV export: replicate, method, alpha, value.
pub fn write_quantile_csv(report: &QuantileReport, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["replicate", "method", "alpha", "value"])?;
    for (rep, methods) in report.per_replicate.iter().enumerate() {
        for (m, curve) in methods.iter().enumerate() {
            for (k, v) in curve.iter().enumerate() {
                w.write_record([
                    rep.to_string(),
                    report.methods[m].clone(),
                    format!("{}", report.alphas[k]),
                    format!("{v}"),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn write_gain_csv(table: &GainTable, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "perturbation", "method", "gain_050", "gain_080", "gain_100"])?;
    for row in &table.rows {
        w.write_record([
            row.model.clone(),
            row.perturbation.clone(),
            row.method.clone(),
            format!("{}", row.gains[0]),
            format!("{}", row.gains[1]),
            format!("{}", row.gains[2]),
        ])?;
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}

pub fn write_rank_csv(ranks: &ImportanceRanks, path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["variant", "replicate", "variable", "rank"])?;
    let variants = [
        ("anchor_boost_imp_rss", &ranks.rank_rss),
        ("anchor_boost_imp_med", &ranks.rank_med),
        ("standard_rf_oob", &ranks.rank_oob),
    ];
    for (name, rows) in variants {
        for (rep, row) in rows.iter().enumerate() {
            for (j, r) in row.iter().enumerate() {
                w.write_record([
                    name.to_string(),
                    rep.to_string(),
                    (j + 1).to_string(),
                    r.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Io(e))?;
    Ok(())
}
