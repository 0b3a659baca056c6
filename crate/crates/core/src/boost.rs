//! Anchor boosting: gradient boosting of the causally regularized
//! objective ||(I - Pi_A)(Y - f)||^2/n + gamma ||Pi_A(Y - f)||^2/n with a
//! pluggable base learner, plus the three stopping criteria.
//!
//! Gradient scaling: the pseudo-response is computed as W^2 (Y - f)
//! without the 1/n factor of the textbook gradient. All provided learners
//! are scale-equivariant, so the factor would only rescale the effective
//! step size by n and demand n times more iterations; it is absorbed into
//! nu. Set `strict_gradient_scaling` to restore the 1/n.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::EnvDataset;
use crate::error::{Error, Result};
use crate::learners::{self, FittedPredictor, LearnerSpec};
use crate::numerics::Projector;

/// Stopping criteria for the boosting iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Global argmin of the objective trace (smallest m on ties).
    Stop1,
    /// Among iterations within the overshoot factor of the minimum, the
    /// one with maximal objective; ties go to the largest m.
    Stop2,
    /// Smallest objective among iterations still above the reference RSS
    /// of a well-tuned regression of W Y on (X, A).
    Stop3,
}

impl StopRule {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stop1" => Ok(StopRule::Stop1),
            "stop2" => Ok(StopRule::Stop2),
            "stop3" => Ok(StopRule::Stop3),
            other => Err(Error::InvalidArgument(format!("unknown stop rule '{other}'"))),
        }
    }
}

fn default_nu() -> f64 {
    0.1
}

fn default_max_iter() -> usize {
    500
}

fn default_overshoot() -> f64 {
    1.1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoostConfig {
    pub gamma: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    pub stop_rule: StopRule,
    /// Overshoot factor for stop2.
    #[serde(default = "default_overshoot")]
    pub overshoot: f64,
    pub learner: LearnerSpec,
    /// Learner for the stop3 reference fit; defaults to `learner`.
    #[serde(default)]
    pub g_opt_learner: Option<LearnerSpec>,
    #[serde(default)]
    pub strict_gradient_scaling: bool,
}

impl BoostConfig {
    pub fn new(gamma: f64, learner: LearnerSpec) -> Self {
        BoostConfig {
            gamma,
            nu: default_nu(),
            max_iter: default_max_iter(),
            stop_rule: StopRule::Stop1,
            overshoot: default_overshoot(),
            learner,
            g_opt_learner: None,
            strict_gradient_scaling: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu < 1.0) {
            return Err(Error::InvalidArgument(format!("nu = {} outside (0,1)", self.nu)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        if self.gamma < 0.0 {
            return Err(Error::InvalidArgument("gamma must be nonnegative".into()));
        }
        if self.overshoot < 1.0 {
            return Err(Error::InvalidArgument("overshoot factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// A fitted anchor boosting model. The full objective trace is always
/// recorded to max_iter so the stop rules are post-hoc selections over
/// one run; prediction truncates at `m_stop`.
pub struct BoostFit {
    stages: Vec<FittedPredictor>,
    pub nu: f64,
    /// ||W_gamma Y||^2 at the zero initialization.
    pub initial_objective: f64,
    /// ||W_gamma (Y - f^[m])||^2 for m = 1..=max_iter.
    pub objective_trace: Vec<f64>,
    /// Chosen stopping iteration, 1-indexed into the trace.
    pub m_stop: usize,
    /// Reference RSS used by stop3, when computed.
    pub g_opt_rss: Option<f64>,
    /// Set when stop3 found no iteration above the reference RSS and fell
    /// back to stop1.
    pub warning: Option<String>,
}

impl BoostFit {
    /// Predicts with the first `m` stages.
    pub fn predict_at(&self, x: &DMatrix<f64>, m: usize) -> DVector<f64> {
        let mut out = DVector::zeros(x.nrows());
        for stage in &self.stages[..m] {
            out += stage.predict(x);
        }
        self.nu * out
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.predict_at(x, self.m_stop)
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }
}

impl crate::learners::Predictor for BoostFit {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        BoostFit::predict(self, x)
    }
}

/// Per-iteration learner seed so stage fits stay independent of each
/// other and reproducible across runs.
pub(crate) fn stage_seed(base: u64, m: usize) -> u64 {
    base ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Selects the stopping iteration from the objective trace. Returns the
/// 1-indexed m and whether stop3 fell back to stop1.
pub fn choose_stop(
    trace: &[f64],
    rule: StopRule,
    overshoot: f64,
    g_opt_rss: Option<f64>,
) -> Result<(usize, bool)> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty objective trace".into()));
    }
    let argmin = trace
        .iter()
        .enumerate()
        .fold((0usize, f64::INFINITY), |best, (i, &v)| if v < best.1 { (i, v) } else { best });
    match rule {
        StopRule::Stop1 => Ok((argmin.0 + 1, false)),
        StopRule::Stop2 => {
            let threshold = overshoot * argmin.1;
            let mut pick = (argmin.0, argmin.1);
            for (i, &v) in trace.iter().enumerate() {
                if v <= threshold && v >= pick.1 {
                    pick = (i, v);
                }
            }
            Ok((pick.0 + 1, false))
        }
        StopRule::Stop3 => {
            let g = g_opt_rss
                .ok_or_else(|| Error::InvalidArgument("stop3 requires a g_opt RSS".into()))?;
            let mut pick: Option<(usize, f64)> = None;
            for (i, &v) in trace.iter().enumerate() {
                if v >= g && pick.map_or(true, |(_, best)| v < best) {
                    pick = Some((i, v));
                }
            }
            match pick {
                Some((i, _)) => Ok((i + 1, false)),
                None => Ok((argmin.0 + 1, true)),
            }
        }
    }
}

/// Training RSS ||W Y - g(X, A)||^2 of the given learner on the
/// concatenated covariates (X, A); the stop3 reference level.
pub fn fit_g_opt(data: &EnvDataset, gamma: f64, learner: &LearnerSpec) -> Result<f64> {
    let projector = Projector::new(&data.a);
    let wy = crate::anchor::transform_w(gamma, &projector, &data.y)?;
    let n = data.n();
    let p = data.p();
    let r = data.r();
    let mut design = DMatrix::zeros(n, p + r);
    design.view_mut((0, 0), (n, p)).copy_from(&data.x);
    design.view_mut((0, p), (n, r)).copy_from(&data.a);
    let fitted = learners::fit(learner, &wy, &design)?;
    Ok((&wy - fitted.predict(&design)).norm_squared())
}

/// Runs the anchor boosting iteration (Algorithm: f^[0] = 0, pseudo-
/// response W^2 (Y - f^[m-1]), base-learner fit, step nu) on centered
/// data, recording the objective trace to max_iter.
pub fn boost_fit(data: &EnvDataset, config: &BoostConfig) -> Result<BoostFit> {
    config.validate()?;
    config.learner.validate(data.p())?;
    let projector = Projector::new(&data.a);
    let n = data.n();
    let nf = n as f64;
    let gamma = config.gamma;

    let w = |v: &DVector<f64>| crate::anchor::transform_w(gamma, &projector, v);
    let initial_objective = w(&data.y)?.norm_squared();

    let mut f = DVector::zeros(n);
    let mut stages: Vec<FittedPredictor> = Vec::with_capacity(config.max_iter);
    let mut trace = Vec::with_capacity(config.max_iter);
    for m in 1..=config.max_iter {
        let resid = &data.y - &f;
        let mut pseudo = w(&w(&resid)?)?;
        if config.strict_gradient_scaling {
            pseudo /= nf;
        }
        let mut spec = config.learner.clone();
        spec.seed = stage_seed(config.learner.seed, m);
        let stage = learners::fit(&spec, &pseudo, &data.x)?;
        f += config.nu * stage.predict(&data.x);
        stages.push(stage);
        trace.push(w(&(&data.y - &f))?.norm_squared());
    }

    let g_opt_rss = if config.stop_rule == StopRule::Stop3 {
        let learner = config.g_opt_learner.as_ref().unwrap_or(&config.learner);
        Some(fit_g_opt(data, gamma, learner)?)
    } else {
        None
    };
    let (m_stop, fell_back) = choose_stop(&trace, config.stop_rule, config.overshoot, g_opt_rss)?;
    let warning = fell_back.then(|| {
        format!(
            "stop3: no iteration with objective >= g_opt RSS {:.6}; fell back to stop1",
            g_opt_rss.unwrap_or(f64::NAN)
        )
    });
    Ok(BoostFit {
        stages,
        nu: config.nu,
        initial_objective,
        objective_trace: trace,
        m_stop,
        g_opt_rss,
        warning,
    })
}
