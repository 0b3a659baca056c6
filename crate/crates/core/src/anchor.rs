//! Linear anchor regression: the W-transform, penalized fits on
//! transformed data, the gamma/quantile correspondence, the in-sample
//! conditional-risk quantile and the worst-case-risk oracle behind the
//! duality theorem.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EnvDataset;
use crate::error::{Error, Result};
use crate::numerics::{chi2_cdf, chi2_quantile, empirical_quantile, lasso_cd, ols, Projector};
use crate::sim::LinearSem;

/// Largest gamma accepted by the fitting routines. Infinite gamma is not
/// a special value; the two-stage least squares limit is approached with
/// large finite gamma.
pub const GAMMA_CAP: f64 = 1e8;

/// Fitting method on the W-transformed variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMethod {
    Ols,
    Lasso { lambda: f64 },
}

/// Result of a linear anchor regression fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorLinearFit {
    pub gamma: f64,
    pub beta: DVector<f64>,
    /// Criterion value at beta on the untransformed data:
    /// ||(I - Pi_A) r||^2 / n + gamma ||Pi_A r||^2 / n.
    pub objective: f64,
    /// The anchor-orthogonal term ||(I - Pi_A) r||^2 / n.
    pub term_orthogonal: f64,
    /// The anchor-projected term ||Pi_A r||^2 / n (before the gamma weight).
    pub term_projected: f64,
    pub method: AnchorMethod,
}

/// Applies W_gamma = I - (1 - sqrt(gamma)) Pi_A to a vector.
pub fn transform_w(gamma: f64, projector: &Projector, v: &DVector<f64>) -> Result<DVector<f64>> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be nonnegative")));
    }
    let shrink = 1.0 - gamma.sqrt();
    Ok(v - shrink * projector.apply(v))
}

/// Applies W_gamma column-wise to a matrix.
pub fn transform_w_mat(gamma: f64, projector: &Projector, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be nonnegative")));
    }
    let shrink = 1.0 - gamma.sqrt();
    Ok(m - shrink * projector.apply_mat(m))
}

/// Fits linear anchor regression at the given gamma on centered data:
/// OLS (or Lasso when `lambda` is given) of W Y on W X. Gamma above
/// [`GAMMA_CAP`] is clamped.
pub fn fit_anchor(data: &EnvDataset, gamma: f64, lambda: Option<f64>) -> Result<AnchorLinearFit> {
    if gamma < 0.0 {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} must be nonnegative")));
    }
    let gamma = gamma.min(GAMMA_CAP);
    let projector = Projector::new(&data.a);
    let wy = transform_w(gamma, &projector, &data.y)?;
    let wx = transform_w_mat(gamma, &projector, &data.x)?;
    let (beta, method) = match lambda {
        None => (ols(&wx, &wy)?.beta, AnchorMethod::Ols),
        Some(l) => (lasso_cd(&wx, &wy, l)?, AnchorMethod::Lasso { lambda: l }),
    };
    let n = data.n() as f64;
    let r = &data.y - &data.x * &beta;
    let proj_r = projector.apply(&r);
    let term_projected = proj_r.norm_squared() / n;
    let term_orthogonal = (r - proj_r).norm_squared() / n;
    Ok(AnchorLinearFit {
        gamma,
        beta,
        objective: term_orthogonal + gamma * term_projected,
        term_orthogonal,
        term_projected,
        method,
    })
}

/// The gamma corresponding to the alpha-quantile of chi-squared with one
/// degree of freedom.
pub fn gamma_from_alpha(alpha: f64) -> Result<f64> {
    chi2_quantile(alpha, 1.0)
}

/// Inverse of [`gamma_from_alpha`].
pub fn alpha_from_gamma(gamma: f64) -> Result<f64> {
    chi2_cdf(gamma, 1.0)
}

/// In-sample estimate of the alpha-quantile of the conditional risk
/// E[(Y - X^T b)^2 | A]: the empirical alpha-quantile of the squared
/// anchor-projected residual components plus the mean squared
/// anchor-orthogonal components. Exact under joint Gaussianity.
pub fn insample_quantile_risk(
    residuals: &DVector<f64>,
    projector: &Projector,
    alpha: f64,
) -> Result<f64> {
    let proj = projector.apply(residuals);
    let ortho = residuals - &proj;
    let proj_sq: Vec<f64> = proj.iter().map(|v| v * v).collect();
    let quantile_term = empirical_quantile(&proj_sq, alpha)?;
    let mean_term = ortho.norm_squared() / residuals.len() as f64;
    Ok(quantile_term + mean_term)
}

/// The class of shift perturbations C_gamma: shifts v = M delta with
/// E[delta delta^T] bounded by gamma Sigma_A.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShiftClassSpec {
    pub gamma: f64,
    /// Column span of the shifts, matching the SEM anchor loading.
    pub m: DMatrix<f64>,
    /// Anchor second-moment matrix.
    pub sigma_a: DMatrix<f64>,
}

impl ShiftClassSpec {
    pub fn new(gamma: f64, m: DMatrix<f64>, sigma_a: DMatrix<f64>) -> Result<Self> {
        if gamma < 0.0 {
            return Err(Error::InvalidArgument("shift gamma must be nonnegative".into()));
        }
        if !sigma_a.is_square() || sigma_a.nrows() != m.ncols() {
            return Err(Error::InvalidArgument("sigma_a dimension mismatch".into()));
        }
        let sym_err = (&sigma_a - sigma_a.transpose()).amax();
        if sym_err > 1e-8 * sigma_a.amax().max(1.0) {
            return Err(Error::InvalidArgument("sigma_a not symmetric".into()));
        }
        let eigs = sigma_a.clone().symmetric_eigen().eigenvalues;
        let min = eigs.min();
        if min < -1e-8 * eigs.amax().max(1.0) {
            return Err(Error::InvalidArgument("sigma_a not positive semidefinite".into()));
        }
        Ok(ShiftClassSpec { gamma, m, sigma_a })
    }
}

fn residual_shift_geometry(
    sem: &LinearSem,
    b: &DVector<f64>,
    shift: &ShiftClassSpec,
) -> Result<(f64, DVector<f64>)> {
    let c = sem.residual_functional(b)?;
    if shift.m.nrows() != c.len() {
        return Err(Error::InvalidArgument("shift.m row dimension mismatch".into()));
    }
    let base: f64 = c
        .iter()
        .zip(sem.noise_sd.iter())
        .map(|(ck, sd)| ck * ck * sd * sd)
        .sum();
    // Residual under shift delta is c^T eps + u^T delta with u = M^T c.
    let u = shift.m.transpose() * c;
    Ok((base, u))
}

/// Worst case of E[(Y^v - (X^v)^T b)^2] over shifts v = M delta with
/// delta delta^T bounded by gamma Sigma_A, solved analytically:
/// c^T Sigma_eps c + gamma u^T Sigma_A u with u = M^T c.
///
/// Random delta add nothing here: the risk is linear in E[delta delta^T],
/// so its supremum over {E[delta delta^T] <= gamma Sigma_A} is attained
/// at a rank-one deterministic extreme point on the boundary.
pub fn worst_case_risk_oracle(
    sem: &LinearSem,
    b: &DVector<f64>,
    shift: &ShiftClassSpec,
) -> Result<f64> {
    let (base, u) = residual_shift_geometry(sem, b, shift)?;
    let su = &shift.sigma_a * &u;
    Ok(base + shift.gamma * u.dot(&su))
}

/// Numerical cross-check of [`worst_case_risk_oracle`]: projected gradient
/// ascent of the risk over the shift ellipsoid, restarted from `n_starts`
/// random points. Parametrizes delta = sqrt(gamma) L w with L the
/// Cholesky factor of Sigma_A and w in the unit ball.
pub fn worst_case_risk_ascent(
    sem: &LinearSem,
    b: &DVector<f64>,
    shift: &ShiftClassSpec,
    n_starts: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let (base, u) = residual_shift_geometry(sem, b, shift)?;
    let r = shift.sigma_a.nrows();
    // Sigma_A may be singular; fall back to the eigendecomposition root.
    let l = match shift.sigma_a.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = shift.sigma_a.clone().symmetric_eigen();
            let roots =
                DVector::from_iterator(r, eig.eigenvalues.iter().map(|v| v.max(0.0).sqrt()));
            &eig.eigenvectors * DMatrix::from_diagonal(&roots)
        }
    };
    let g = shift.gamma.sqrt() * (l.transpose() * &u);
    let mut best = base;
    for _ in 0..n_starts {
        let mut w = DVector::from_fn(r, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        if w.norm() > 1.0 {
            w /= w.norm();
        }
        let mut step = 1.0;
        let mut value = g.dot(&w).powi(2);
        for _ in 0..500 {
            let grad = 2.0 * g.dot(&w) * &g;
            let mut cand = &w + step * grad;
            let norm = cand.norm();
            if norm > 1.0 {
                cand /= norm;
            }
            let cand_value = g.dot(&cand).powi(2);
            if cand_value > value {
                w = cand;
                value = cand_value;
                step *= 1.2;
            } else {
                step *= 0.5;
                if step < 1e-14 {
                    break;
                }
            }
        }
        best = best.max(base + value);
    }
    Ok(best)
}
