//! anchorlab command line: dataset simulation, anchor / ICP / boosting
//! fits, reproduction of the replicated experiments and numerical
//! verification commands.
//!
//! Exit codes: 0 success, 2 usage or argument errors, 3 data errors
//! (I/O, CSV, schema), 4 numeric failures (singular designs,
//! non-convergence, failed verification).

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anchorlab::Error;
use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "anchorlab", version, about = "Causal regularization toolkit")]
struct Cli {
    /// Worker threads for replicate-parallel commands.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML config file; explicit flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $ANCHORLAB_OUT_DIR, then the current
    /// directory).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a training set, a perturbed test set and the model spec.
    Simulate(SimulateArgs),
    /// Fit an estimator on a dataset CSV.
    #[command(subcommand)]
    Fit(FitCommand),
    /// Re-run a replicated experiment and write its CSV bundle.
    Reproduce(ReproduceArgs),
    /// Numerical verification checks; nonzero exit when a check fails.
    #[command(subcommand)]
    Verify(VerifyCommand),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Model: linear_illustration | m1 | m2 | m3 | m2_discr.
    #[arg(long)]
    model: Option<String>,
    /// Perturbation for the test set: none | moderate_shift |
    /// strong_shift | sqrt10_amplify | discrete_amplify_3x.
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_out: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// File name prefix; defaults to the model name.
    #[arg(long)]
    prefix: Option<String>,
}

#[derive(Debug, Subcommand)]
enum FitCommand {
    /// Linear anchor regression (optionally with an l1 penalty).
    Anchor(FitAnchorArgs),
    /// Invariant causal prediction over the ENV column.
    Icp(FitIcpArgs),
    /// Anchor boosting with a pluggable base learner.
    Boost(FitBoostArgs),
    /// Permutation variable importance of an anchor boosting fit.
    Importance(FitImportanceArgs),
}

#[derive(Debug, Args)]
struct FitAnchorArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// l1 penalty; omit for ordinary least squares on the transformed data.
    #[arg(long)]
    lambda: Option<f64>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitIcpArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitBoostArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// Base learner: tree | forest | linear | lm_rf.
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Stopping rule: stop1 | stop2 | stop3.
    #[arg(long)]
    stop: Option<String>,
    /// Reference learner for stop3.
    #[arg(long)]
    gopt_learner: Option<String>,
    /// Keep the 1/n factor of the pseudo-response.
    #[arg(long)]
    strict_gradient_scaling: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitImportanceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    gamma: Option<f64>,
    /// Base learner for the boosting fit (default lm_rf).
    #[arg(long)]
    learner: Option<String>,
    /// Permutation repetitions per variable.
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// Target: fig8 | fig9 | fig10 | fig11 | fig12 | table1.
    target: String,
    /// Number of replicates (full scale is 100).
    #[arg(long)]
    runs: Option<usize>,
    /// Desk scale: 20 replicates.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum VerifyCommand {
    /// Worst-case shift risk against the population regularized risk.
    Duality {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// ICP coverage guarantee on a two-environment linear model.
    Coverage {
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Gamma/quantile correspondence of the regularized risk.
    QuantileLink {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Command failure: either a library error or a failed verification.
pub enum CliError {
    Lib(Error),
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Lib(e)
    }
}

fn exit_code(err: &CliError) -> u8 {
    match err {
        CliError::Verification(_) => 4,
        CliError::Lib(e) => match e {
            Error::InvalidArgument(_) => 2,
            Error::Io(_)
            | Error::Csv(_)
            | Error::Schema(_)
            | Error::NonFinite { .. }
            | Error::AbsentLevel { .. }
            | Error::Json(_) => 3,
            Error::SingularDesign { .. }
            | Error::NonConvergence { .. }
            | Error::DegenerateGroup(_)
            | Error::EnumerationBudget { .. }
            | Error::Learner(_) => 4,
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                CliError::Lib(e) => eprintln!("error: {e}"),
                CliError::Verification(msg) => eprintln!("error: verification failed: {msg}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let file = FileConfig::load(cli.config.as_deref())?;
    if let Some(threads) = cli.threads.or(file.threads) {
        if threads == 0 {
            return Err(Error::InvalidArgument("threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    }
    let out_dir = cli
        .out_dir
        .clone()
        .or_else(|| file.out_dir.clone())
        .or_else(|| std::env::var_os("ANCHORLAB_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    match cli.command {
        Command::Simulate(args) => commands::simulate(&args, &file, &out_dir),
        Command::Fit(FitCommand::Anchor(args)) => commands::fit_anchor(&args, &file),
        Command::Fit(FitCommand::Icp(args)) => commands::fit_icp(&args, &file),
        Command::Fit(FitCommand::Boost(args)) => commands::fit_boost(&args, &file),
        Command::Fit(FitCommand::Importance(args)) => commands::fit_importance(&args, &file),
        Command::Reproduce(args) => commands::reproduce(&args, &file, &out_dir),
        Command::Verify(cmd) => commands::verify(&cmd, &file),
    }
}
