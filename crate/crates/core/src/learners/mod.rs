//! Base learners for anchor boosting: a CART regression tree, a Random
//! Forest built on it, a linear model and the LM+RF composite (linear fit
//! followed by a forest on the residuals).

mod forest;
mod linear;
mod tree;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::{fit_forest, FittedForest};
pub use linear::{fit_linear, FittedLinear};
pub use tree::{fit_tree, FittedTree, TreeParams};

/// A fitted regression function.
pub trait Predictor: Send + Sync {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64>;
}

pub type FittedPredictor = Box<dyn Predictor>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Tree,
    Forest,
    Linear,
    LmRf,
}

impl LearnerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "tree" => Ok(LearnerKind::Tree),
            "forest" | "rf" => Ok(LearnerKind::Forest),
            "linear" | "lm" => Ok(LearnerKind::Linear),
            "lm_rf" => Ok(LearnerKind::LmRf),
            other => Err(Error::InvalidArgument(format!("unknown learner '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Tree => "tree",
            LearnerKind::Forest => "forest",
            LearnerKind::Linear => "linear",
            LearnerKind::LmRf => "lm_rf",
        }
    }
}

fn default_min_leaf() -> usize {
    5
}

fn default_n_trees() -> usize {
    100
}

fn default_bootstrap() -> bool {
    true
}

/// Base-learner configuration. `mtry = None` means max(1, floor(p / 3)),
/// resolved at fitting time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub mtry: Option<usize>,
    #[serde(default = "default_n_trees")]
    pub n_trees: usize,
    #[serde(default = "default_bootstrap")]
    pub bootstrap: bool,
    #[serde(default)]
    pub seed: u64,
}

impl LearnerSpec {
    pub fn new(kind: LearnerKind) -> Self {
        LearnerSpec {
            kind,
            max_depth: None,
            min_leaf: default_min_leaf(),
            mtry: None,
            n_trees: default_n_trees(),
            bootstrap: default_bootstrap(),
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.min_leaf == 0 {
            return Err(Error::InvalidArgument("min_leaf must be at least 1".into()));
        }
        if self.n_trees == 0 {
            return Err(Error::InvalidArgument("n_trees must be at least 1".into()));
        }
        if let Some(m) = self.mtry {
            if m == 0 || m > p {
                return Err(Error::InvalidArgument(format!("mtry = {m} outside 1..={p}")));
            }
        }
        Ok(())
    }

    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| (p / 3).max(1))
    }

    pub(crate) fn tree_params(&self, p: usize, subsample: bool) -> TreeParams {
        TreeParams {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            mtry: if subsample { self.resolved_mtry(p) } else { p },
        }
    }
}

/// The LM+RF composite: an intercept OLS fit followed by a Random Forest
/// on its residuals; predictions are the sum of the two stages.
pub struct FittedLmRf {
    pub linear: FittedLinear,
    pub forest: FittedForest,
}

impl Predictor for FittedLmRf {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.linear.predict(x) + self.forest.predict(x)
    }
}

pub fn fit_lm_rf(u: &DVector<f64>, x: &DMatrix<f64>, spec: &LearnerSpec) -> Result<FittedLmRf> {
    let linear = fit_linear(u, x)?;
    let residuals = u - linear.predict(x);
    let forest = fit_forest(&residuals, x, spec)?;
    Ok(FittedLmRf { linear, forest })
}

/// Fits the learner selected by `spec.kind`.
pub fn fit(spec: &LearnerSpec, u: &DVector<f64>, x: &DMatrix<f64>) -> Result<FittedPredictor> {
    spec.validate(x.ncols())?;
    Ok(match spec.kind {
        LearnerKind::Tree => {
            let mut rng = forest::tree_rng(spec.seed, 0);
            Box::new(fit_tree(u, x, &spec.tree_params(x.ncols(), false), &mut rng)?)
        }
        LearnerKind::Forest => Box::new(fit_forest(u, x, spec)?),
        LearnerKind::Linear => Box::new(fit_linear(u, x)?),
        LearnerKind::LmRf => Box::new(fit_lm_rf(u, x, spec)?),
    })
}
