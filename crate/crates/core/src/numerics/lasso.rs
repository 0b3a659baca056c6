use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Objective convention: (1/n) * ||y - X b||^2 + lambda * ||b||_1.
/// With this scaling the all-zero solution holds exactly for
/// lambda >= lambda_max = 2 * max_j |x_j^T y| / n.
pub fn lasso_lambda_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mut m = 0.0f64;
    for j in 0..x.ncols() {
        m = m.max((x.column(j).dot(y)).abs());
    }
    2.0 * m / n
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

const MAX_SWEEPS: usize = 10_000;
const KKT_TOL: f64 = 1e-7;

/// Columns rescaled to unit mean square, used for path screening so the
/// entry order does not depend on column scales.
fn standardize(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut xs = x.clone();
    for j in 0..x.ncols() {
        let s = (x.column(j).norm_squared() / n).sqrt();
        if s > 0.0 {
            for i in 0..x.nrows() {
                xs[(i, j)] /= s;
            }
        }
    }
    xs
}

/// Cyclic coordinate descent; `warm` is an optional starting point in the
/// coordinates of the supplied design.
fn cd_solve(
    xs: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    warm: Option<DVector<f64>>,
) -> Result<DVector<f64>> {
    let (n, p) = (xs.nrows(), xs.ncols());
    let nf = n as f64;
    let mut b = warm.unwrap_or_else(|| DVector::zeros(p));
    let mut r = y - xs * &b;
    // (1/n) x_j^T x_j; zero columns stay pinned at zero.
    let z: Vec<f64> = (0..p).map(|j| xs.column(j).norm_squared() / nf).collect();
    for sweep in 1..=MAX_SWEEPS {
        let mut max_change = 0.0f64;
        for j in 0..p {
            if z[j] == 0.0 {
                continue;
            }
            let old = b[j];
            let rho = xs.column(j).dot(&r) / nf + z[j] * old;
            let new = soft_threshold(rho, lambda / 2.0) / z[j];
            if new != old {
                let delta = new - old;
                r -= delta * xs.column(j);
                b[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        // KKT residual of the standardized problem.
        let mut kkt = 0.0f64;
        for j in 0..p {
            if z[j] == 0.0 {
                continue;
            }
            let g = -2.0 / nf * xs.column(j).dot(&r);
            let v = if b[j] != 0.0 {
                (g + lambda * b[j].signum()).abs()
            } else {
                (g.abs() - lambda).max(0.0)
            };
            kkt = kkt.max(v);
        }
        if kkt <= KKT_TOL {
            return Ok(b);
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::NonConvergence { sweeps: sweep, kkt });
        }
        let _ = max_change;
    }
    unreachable!()
}

/// Lasso solution of (1/n)||y - X b||^2 + lambda ||b||_1 by cyclic
/// coordinate descent on the original columns. The per-coordinate curvature
/// terms absorb column scaling, so no rescaling of the penalty is needed and
/// the objective above is solved exactly as written.
pub fn lasso_cd(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    if lambda < 0.0 {
        return Err(Error::InvalidArgument("lambda must be nonnegative".into()));
    }
    cd_solve(x, y, lambda, None)
}

/// Order in which variables first enter the Lasso path on a geometric
/// lambda grid (100 points, min/max ratio 1e-3), truncated to the first
/// `k` distinct entrants.
pub fn lasso_path_order(x: &DMatrix<f64>, y: &DVector<f64>, k: usize) -> Result<Vec<usize>> {
    let p = x.ncols();
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={p}")));
    }
    let xs = standardize(x);
    let n = x.nrows() as f64;
    let mut lmax = 0.0f64;
    for j in 0..p {
        lmax = lmax.max(2.0 * xs.column(j).dot(y).abs() / n);
    }
    if lmax == 0.0 {
        // y orthogonal to every column: arbitrary but deterministic order.
        return Ok((0..k.min(p)).collect());
    }
    let grid: Vec<f64> = (0..100)
        .map(|i| lmax * 1e-3f64.powf(i as f64 / 99.0))
        .collect();
    let mut order: Vec<usize> = Vec::new();
    let mut warm = DVector::zeros(p);
    for &lambda in &grid {
        let b = cd_solve(&xs, y, lambda, Some(warm.clone()))?;
        for j in 0..p {
            if b[j] != 0.0 && !order.contains(&j) {
                order.push(j);
            }
        }
        warm = b;
        if order.len() >= k {
            break;
        }
    }
    // Variables that never enter are appended in index order when k = p.
    if order.len() < k {
        for j in 0..p {
            if !order.contains(&j) {
                order.push(j);
                if order.len() == k {
                    break;
                }
            }
        }
    }
    order.truncate(k);
    Ok(order)
}
