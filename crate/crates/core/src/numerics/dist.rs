use statrs::distribution::{ChiSquared, ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};

/// Inverts a CDF by bracket expansion and bisection. statrs's generic
/// `inverse_cdf` only reaches ~1e-5, which is not enough here.
fn invert_cdf(cdf: impl Fn(f64) -> f64, alpha: f64) -> f64 {
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while cdf(hi) < alpha && hi < 1e300 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi.max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Quantile of the chi-squared distribution with `df` degrees of freedom.
pub fn chi2_quantile(alpha: f64, df: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} outside (0,1)"
        )));
    }
    let d = ChiSquared::new(df)
        .map_err(|e| Error::InvalidArgument(format!("chi2 df {df}: {e}")))?;
    Ok(invert_cdf(|x| d.cdf(x), alpha))
}

pub fn chi2_cdf(x: f64, df: f64) -> Result<f64> {
    let d = ChiSquared::new(df)
        .map_err(|e| Error::InvalidArgument(format!("chi2 df {df}: {e}")))?;
    Ok(d.cdf(x.max(0.0)))
}

/// CDF of the F distribution with (d1, d2) degrees of freedom.
pub fn f_cdf(d1: f64, d2: f64, x: f64) -> Result<f64> {
    if d1 < 1.0 || d2 < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid F degrees of freedom ({d1}, {d2})"
        )));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let d = FisherSnedecor::new(d1, d2)
        .map_err(|e| Error::InvalidArgument(format!("F({d1},{d2}): {e}")))?;
    Ok(d.cdf(x))
}

pub fn f_quantile(d1: f64, d2: f64, alpha: f64) -> Result<f64> {
    if d1 < 1.0 || d2 < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "invalid F degrees of freedom ({d1}, {d2})"
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} outside (0,1)"
        )));
    }
    let d = FisherSnedecor::new(d1, d2)
        .map_err(|e| Error::InvalidArgument(format!("F({d1},{d2}): {e}")))?;
    Ok(invert_cdf(|x| d.cdf(x), alpha))
}
