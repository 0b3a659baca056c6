use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Ordinary least squares fit.
#[derive(Debug, Clone)]
pub struct LinearFit {
    pub beta: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

/// Least squares via SVD with a rank check; errors on singular designs.
pub fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if p > n {
        return Err(Error::InvalidArgument(format!("p = {p} exceeds n = {n}")));
    }
    if y.len() != n {
        return Err(Error::InvalidArgument("y length mismatch".into()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-10 * smax.max(f64::MIN_POSITIVE);
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    if rank < p {
        return Err(Error::SingularDesign { rank, cols: p });
    }
    let beta = svd
        .solve(y, tol)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let residuals = y - x * &beta;
    let rss = residuals.norm_squared();
    Ok(LinearFit { beta, residuals, rss })
}
