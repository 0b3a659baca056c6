//! Implementations of the CLI subcommands: artifact plumbing around the
//! library estimators and the replicated-experiment harness.

use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use anchorlab::anchor::{alpha_from_gamma, fit_anchor as anchor_fit, insample_quantile_risk};
use anchorlab::boost::{boost_fit, BoostConfig, StopRule};
use anchorlab::data::{load_csv_auto, save_csv, EnvironmentPartition};
use anchorlab::eval::{
    gain_cell_plan, run_experiment, run_importance_experiment, top_rank_frequency,
    verify_duality, verify_icp_coverage, verify_quantile_link, write_gain_csv,
    write_quantile_csv, write_rank_csv, ExperimentPlan, ExperimentResult, GainRow, GainTable,
    MethodSpec,
};
use anchorlab::icp::{icp_confidence_statement, icp_search, IcpConfig};
use anchorlab::importance::permutation_importance;
use anchorlab::learners::{LearnerKind, LearnerSpec};
use anchorlab::numerics::{chi2_quantile, Projector};
use anchorlab::sim::{
    gen_out_of_sample, generate, replicate_rng, ModelKind, PerturbationKind,
};
use anchorlab::{Error, Result};

type CmdResult = std::result::Result<(), CliError>;
use rand::Rng;

use crate::config::{pick, pick_opt, FileConfig};
use crate::{
    CliError, FitAnchorArgs, FitBoostArgs, FitIcpArgs, FitImportanceArgs, ReproduceArgs,
    SimulateArgs, VerifyCommand,
};

fn emit_json<T: Serialize>(value: &T, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match output {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn simulate(args: &SimulateArgs, file: &FileConfig, out_dir: &Path) -> CmdResult {
    let model_name = pick_opt(args.model.clone(), file.model.clone())
        .ok_or_else(|| Error::InvalidArgument("simulate requires --model".into()))?;
    let model = ModelKind::parse(&model_name)?;
    let perturbation = PerturbationKind::parse(&pick(
        args.perturbation.clone(),
        file.perturbation.clone(),
        "none".into(),
    ))?;
    let n = pick(args.n, file.n, 300);
    let n_out = pick(args.n_out, file.n_out, 2000);
    let seed = pick(args.seed, file.seed, 0);
    let prefix = args.prefix.clone().unwrap_or_else(|| model.name().to_string());

    let (train, spec) = generate(model, n, seed)?;
    let test = gen_out_of_sample(&spec, perturbation, n_out, seed.wrapping_add(1))?;

    std::fs::create_dir_all(out_dir).map_err(Error::Io)?;
    let train_path = out_dir.join(format!("{prefix}_train.csv"));
    let test_path = out_dir.join(format!("{prefix}_test.csv"));
    let spec_path = out_dir.join(format!("{prefix}_spec.json"));
    save_csv(&train_path, &train)?;
    save_csv(&test_path, &test)?;
    write_json(&spec, &spec_path)?;
    println!(
        "wrote {} {} {}",
        train_path.display(),
        test_path.display(),
        spec_path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct AnchorReport {
    gamma: f64,
    lambda: Option<f64>,
    y_mean: f64,
    x_means: Vec<f64>,
    beta: Vec<f64>,
    objective: f64,
    term_orthogonal: f64,
    term_projected: f64,
}

pub fn fit_anchor(args: &FitAnchorArgs, file: &FileConfig) -> CmdResult {
    let gamma = pick_opt(args.gamma, file.gamma)
        .ok_or_else(|| Error::InvalidArgument("fit anchor requires --gamma".into()))?;
    let lambda = pick_opt(args.lambda, file.lambda);
    let data = load_csv_auto(&args.data)?;
    let (centered, centering) = data.center();
    let fit = anchor_fit(&centered, gamma, lambda)?;
    let report = AnchorReport {
        gamma: fit.gamma,
        lambda,
        y_mean: centering.y_mean,
        x_means: centering.x_means.iter().cloned().collect(),
        beta: fit.beta.iter().cloned().collect(),
        objective: fit.objective,
        term_orthogonal: fit.term_orthogonal,
        term_projected: fit.term_projected,
    };
    emit_json(&report, args.output.as_deref())?;
    Ok(())
}

pub fn fit_icp(args: &FitIcpArgs, file: &FileConfig) -> CmdResult {
    let alpha = pick(args.alpha, file.alpha, 0.05);
    let data = load_csv_auto(&args.data)?;
    let labels = data.env_labels.clone().ok_or_else(|| {
        Error::Schema("fit icp requires an ENV column with environment labels".into())
    })?;
    let part = EnvironmentPartition::from_labels(&labels, 2)?;
    let config = IcpConfig::new(alpha, data.p());
    let result = icp_search(&data, &part, &config)?;
    let membership = icp_confidence_statement(&result, data.p());
    emit_json(&json!({ "result": result, "membership": membership }), args.output.as_deref())?;
    Ok(())
}

#[derive(Serialize)]
struct BoostReport {
    gamma: f64,
    nu: f64,
    learner: String,
    stop_rule: String,
    m_stop: usize,
    initial_objective: f64,
    objective_trace: Vec<f64>,
    g_opt_rss: Option<f64>,
    warning: Option<String>,
}

pub fn fit_boost(args: &FitBoostArgs, file: &FileConfig) -> CmdResult {
    let gamma = pick_opt(args.gamma, file.gamma)
        .ok_or_else(|| Error::InvalidArgument("fit boost requires --gamma".into()))?;
    let stop_name = pick(args.stop.clone(), file.stop.clone(), "stop2".into());
    let stop_rule = StopRule::parse(&stop_name)?;
    let seed = pick(args.seed, file.seed, 0);
    let mut learner = match &args.learner {
        Some(name) => LearnerSpec::new(LearnerKind::parse(name)?),
        None => file
            .learner
            .clone()
            .unwrap_or_else(|| LearnerSpec::new(LearnerKind::Forest)),
    };
    learner.seed = seed;
    let gopt_learner = match &args.gopt_learner {
        Some(name) => Some(LearnerSpec::new(LearnerKind::parse(name)?).with_seed(seed)),
        None => file.gopt_learner.clone(),
    };
    if stop_rule == StopRule::Stop3 && gopt_learner.is_none() {
        return Err(Error::InvalidArgument("--stop stop3 requires --gopt-learner".into()).into());
    }

    let data = load_csv_auto(&args.data)?;
    let (centered, _) = data.center();
    let mut config = BoostConfig::new(gamma, learner);
    config.nu = pick(args.nu, file.nu, config.nu);
    config.max_iter = pick(args.max_iter, file.max_iter, config.max_iter);
    config.stop_rule = stop_rule;
    config.g_opt_learner = gopt_learner;
    config.strict_gradient_scaling = args.strict_gradient_scaling;
    let fit = boost_fit(&centered, &config)?;
    let report = BoostReport {
        gamma,
        nu: config.nu,
        learner: config.learner.kind.name().into(),
        stop_rule: stop_name,
        m_stop: fit.m_stop,
        initial_objective: fit.initial_objective,
        objective_trace: fit.objective_trace.clone(),
        g_opt_rss: fit.g_opt_rss,
        warning: fit.warning.clone(),
    };
    emit_json(&report, args.output.as_deref())?;
    Ok(())
}

pub fn fit_importance(args: &FitImportanceArgs, file: &FileConfig) -> CmdResult {
    let gamma = pick(args.gamma, file.gamma, 7.0);
    let repetitions = pick(args.repetitions, file.repetitions, 1);
    let seed = pick(args.seed, file.seed, 0);
    let kind = match &args.learner {
        Some(name) => LearnerKind::parse(name)?,
        None => LearnerKind::LmRf,
    };
    let data = load_csv_auto(&args.data)?;
    let (centered, _) = data.center();
    let mut learner = LearnerSpec::new(kind).with_seed(seed);
    learner.n_trees = 10;
    learner.min_leaf = (centered.n() / 2).max(5);
    let mut config = BoostConfig::new(gamma, learner);
    config.max_iter = 300;
    config.stop_rule = StopRule::Stop2;
    let fit = boost_fit(&centered, &config)?;
    let report = permutation_importance(&fit, &centered, repetitions, seed)?;
    emit_json(&report, args.output.as_deref())?;
    Ok(())
}

fn boost_method(kind: LearnerKind, stop_rule: StopRule) -> MethodSpec {
    let mut method = MethodSpec::boost_default(kind, 7.0);
    if let MethodSpec::AnchorBoost { stop_rule: ref mut rule, .. } = method {
        *rule = stop_rule;
    }
    method
}

fn six_methods() -> Vec<MethodSpec> {
    vec![
        MethodSpec::Learner { learner: LearnerSpec::new(LearnerKind::Forest) },
        boost_method(LearnerKind::Forest, StopRule::Stop1),
        boost_method(LearnerKind::Forest, StopRule::Stop2),
        MethodSpec::Learner { learner: LearnerSpec::new(LearnerKind::LmRf) },
        boost_method(LearnerKind::LmRf, StopRule::Stop1),
        boost_method(LearnerKind::LmRf, StopRule::Stop2),
    ]
}

fn write_experiment(
    result: &ExperimentResult,
    out_dir: &Path,
    stem: &str,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let csv_path = out_dir.join(format!("{stem}_quantiles.csv"));
    write_quantile_csv(&result.report, &csv_path)?;
    let json_path = out_dir.join(format!("{stem}_summary.json"));
    write_json(result, &json_path)?;
    written.push(csv_path);
    written.push(json_path);
    Ok(())
}

fn reproduce_quantile_figure(
    stem: &str,
    model: ModelKind,
    perturbations: &[PerturbationKind],
    runs: usize,
    seed: u64,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    for (k, &perturbation) in perturbations.iter().enumerate() {
        let plan = ExperimentPlan::new(model, perturbation, six_methods(), runs, seed);
        let result = run_experiment(&plan)?;
        let suffix = if perturbations.len() > 1 {
            format!("{stem}_{}", plan_label(perturbation))
        } else {
            stem.to_string()
        };
        let _ = k;
        write_experiment(&result, out_dir, &suffix, written)?;
    }
    Ok(())
}

fn plan_label(perturbation: PerturbationKind) -> &'static str {
    match perturbation {
        PerturbationKind::None => "none",
        PerturbationKind::ModerateShift => "moderate",
        PerturbationKind::StrongShift => "strong",
        PerturbationKind::Sqrt10Amplify => "sqrt10",
        PerturbationKind::DiscreteAmplify3x => "amplify3x",
    }
}

/// Per-replicate data behind the right panel of the linear illustration:
/// in-sample quantile risk at the alpha matching gamma = 7 against the
/// out-of-sample mean squared error under sqrt(10)-amplified anchors.
fn fig8_quantile_link(
    runs: usize,
    seed: u64,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let gamma = 7.0;
    let alpha = alpha_from_gamma(gamma)?;
    let path = out_dir.join("fig8_quantile_link.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["replicate", "insample_quantile", "outsample_mse"])?;
    for rep in 0..runs {
        let mut rng = replicate_rng(seed, rep as u64);
        let train_seed: u64 = rng.gen();
        let test_seed: u64 = rng.gen();
        let (train, spec) = generate(ModelKind::LinearIllustration, 300, train_seed)?;
        let test =
            gen_out_of_sample(&spec, PerturbationKind::Sqrt10Amplify, 2000, test_seed)?;
        let (c, centering) = train.center();
        let fit = anchor_fit(&c, gamma, None)?;
        let projector = Projector::new(&c.a);
        let residuals = &c.y - &c.x * &fit.beta;
        let insample = insample_quantile_risk(&residuals, &projector, alpha)?;
        let mut mse = 0.0;
        for i in 0..test.x.nrows() {
            let mut pred = centering.y_mean;
            for j in 0..test.x.ncols() {
                pred += (test.x[(i, j)] - centering.x_means[j]) * fit.beta[j];
            }
            mse += (test.y[i] - pred).powi(2);
        }
        mse /= test.x.nrows() as f64;
        w.write_record([rep.to_string(), format!("{insample}"), format!("{mse}")])?;
    }
    w.flush().map_err(Error::Io)?;
    written.push(path);
    Ok(())
}

fn reproduce_table1(
    runs: usize,
    seed: u64,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let cells = [
        (ModelKind::M1, PerturbationKind::ModerateShift, LearnerKind::Forest),
        (ModelKind::M1, PerturbationKind::ModerateShift, LearnerKind::LmRf),
        (ModelKind::M1, PerturbationKind::StrongShift, LearnerKind::Forest),
        (ModelKind::M1, PerturbationKind::StrongShift, LearnerKind::LmRf),
        (ModelKind::M2, PerturbationKind::ModerateShift, LearnerKind::Forest),
        (ModelKind::M2, PerturbationKind::ModerateShift, LearnerKind::LmRf),
        (ModelKind::M2, PerturbationKind::StrongShift, LearnerKind::Forest),
        (ModelKind::M2, PerturbationKind::StrongShift, LearnerKind::LmRf),
    ];
    let mut table = GainTable {
        baseline: "plain base learner".into(),
        rows: Vec::with_capacity(cells.len()),
    };
    for (model, perturbation, kind) in cells {
        let plan = gain_cell_plan(model, perturbation, kind, 7.0, runs, seed);
        let result = run_experiment(&plan)?;
        let cell = &result.gains.rows[0];
        table.rows.push(GainRow {
            model: cell.model.clone(),
            perturbation: cell.perturbation.clone(),
            method: format!("{} vs {}", cell.method, kind.name()),
            gains: cell.gains,
        });
    }
    let csv_path = out_dir.join("table1_gains.csv");
    write_gain_csv(&table, &csv_path)?;
    let json_path = out_dir.join("table1_summary.json");
    write_json(&table, &json_path)?;
    written.push(csv_path);
    written.push(json_path);
    Ok(())
}

fn reproduce_fig10(
    runs: usize,
    seed: u64,
    out_dir: &Path,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let ranks = run_importance_experiment(runs, 7.0, 300, seed)?;
    let csv_path = out_dir.join("fig10_ranks.csv");
    write_rank_csv(&ranks, &csv_path)?;
    let summary = json!({
        "replicates": ranks.replicates,
        "seed": ranks.seed,
        "top2_frequency_vars_2_3": {
            "anchor_boost_imp_rss": top_rank_frequency(&ranks.rank_rss, &[2, 3]),
            "anchor_boost_imp_med": top_rank_frequency(&ranks.rank_med, &[2, 3]),
            "standard_rf_oob": top_rank_frequency(&ranks.rank_oob, &[2, 3]),
        },
    });
    let json_path = out_dir.join("fig10_summary.json");
    write_json(&summary, &json_path)?;
    written.push(csv_path);
    written.push(json_path);
    Ok(())
}

pub fn reproduce(args: &ReproduceArgs, file: &FileConfig, out_dir: &Path) -> CmdResult {
    let runs = if args.quick { 20 } else { pick(args.runs, file.runs, 100) };
    if runs == 0 {
        return Err(Error::InvalidArgument("--runs must be at least 1".into()).into());
    }
    let seed = pick(args.seed, file.seed, 42);
    std::fs::create_dir_all(out_dir).map_err(Error::Io)?;
    let mut written = Vec::new();
    match args.target.as_str() {
        "fig8" => {
            let plan = ExperimentPlan::new(
                ModelKind::LinearIllustration,
                PerturbationKind::Sqrt10Amplify,
                vec![MethodSpec::Ols, MethodSpec::AnchorOls { gamma: 7.0, lambda: None }],
                runs,
                seed,
            );
            let result = run_experiment(&plan)?;
            write_experiment(&result, out_dir, "fig8", &mut written)?;
            fig8_quantile_link(runs, seed, out_dir, &mut written)?;
        }
        "fig9" => reproduce_quantile_figure(
            "fig9",
            ModelKind::M1,
            &[PerturbationKind::ModerateShift, PerturbationKind::StrongShift],
            runs,
            seed,
            out_dir,
            &mut written,
        )?,
        "fig10" => reproduce_fig10(runs, seed, out_dir, &mut written)?,
        "fig11" => reproduce_quantile_figure(
            "fig11",
            ModelKind::M2,
            &[PerturbationKind::ModerateShift, PerturbationKind::StrongShift],
            runs,
            seed,
            out_dir,
            &mut written,
        )?,
        "fig12" => reproduce_quantile_figure(
            "fig12",
            ModelKind::M2Discr,
            &[PerturbationKind::DiscreteAmplify3x],
            runs,
            seed,
            out_dir,
            &mut written,
        )?,
        "table1" => reproduce_table1(runs, seed, out_dir, &mut written)?,
        other => {
            return Err(Error::InvalidArgument(format!("unknown target '{other}'")).into());
        }
    }
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn verify(cmd: &VerifyCommand, file: &FileConfig) -> CmdResult {
    match cmd {
        VerifyCommand::Duality { trials, seed } => {
            let trials = pick(*trials, file.runs, 50);
            let seed = pick(*seed, file.seed, 17);
            let mut rng = replicate_rng(seed, 0);
            let sem = anchorlab::sim::LinearSem::random_acyclic(3, 1, 2, &mut rng);
            let max_rel =
                verify_duality(&sem, &[0.0, 0.5, 1.0, 5.0, 7.0, 20.0], trials, seed)?;
            let pass = max_rel < 1e-6;
            emit_json(
                &json!({ "max_relative_discrepancy": max_rel, "trials": trials, "pass": pass }),
                None,
            )?;
            if !pass {
                return Err(CliError::Verification(format!(
                    "duality discrepancy {max_rel:.3e} >= 1e-6"
                )));
            }
        }
        VerifyCommand::Coverage { replicates, alpha, seed } => {
            let replicates = pick(*replicates, file.runs, 200);
            let alpha = pick(*alpha, file.alpha, 0.05);
            let seed = pick(*seed, file.seed, 17);
            let report = verify_icp_coverage(replicates, alpha, 2.0, 150, seed)?;
            let se = (alpha * (1.0 - alpha) / replicates as f64).sqrt();
            let threshold = 1.0 - alpha - 3.0 * se;
            let pass = report.coverage >= threshold;
            emit_json(&json!({ "report": report, "threshold": threshold, "pass": pass }), None)?;
            if !pass {
                return Err(CliError::Verification(format!(
                    "coverage {:.4} below {threshold:.4}",
                    report.coverage
                )));
            }
        }
        VerifyCommand::QuantileLink { n, gamma, seed } => {
            let n = pick(*n, file.n, 100_000);
            let gamma = pick(*gamma, file.gamma, 7.0);
            let seed = pick(*seed, file.seed, 17);
            let chi2 = chi2_quantile(0.9918, 1.0)?;
            let report = verify_quantile_link(gamma, n, seed)?;
            let pass = (chi2 - 7.0).abs() <= 0.05 && report.relative_error < 0.05;
            emit_json(
                &json!({ "chi2_quantile_0p9918": chi2, "report": report, "pass": pass }),
                None,
            )?;
            if !pass {
                return Err(CliError::Verification(format!(
                    "quantile link: chi2 {chi2:.4}, relative error {:.4}",
                    report.relative_error
                )));
            }
        }
    }
    Ok(())
}
