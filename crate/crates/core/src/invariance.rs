//! Tests of the null hypothesis that the linear-Gaussian conditional of Y
//! given X_S is identical across environments: a Chow test on the
//! coefficients combined with a residual-variance equality test. The null
//! fixes both the coefficients and the error distribution, so the variance
//! component is on by default; a coefficient-only mode is available.

use nalgebra::{DMatrix, DVector};

use crate::data::{EnvDataset, EnvironmentPartition, SubsetS};
use crate::error::{Error, Result};
use crate::numerics::{f_cdf, ols};

/// Outcome of the combined invariance test.
#[derive(Debug, Clone)]
pub struct InvarianceTestResult {
    pub p_value: f64,
    pub statistic_coeff: f64,
    pub statistic_var: f64,
}

impl InvarianceTestResult {
    pub fn accepted_at(&self, alpha: f64) -> bool {
        self.p_value > alpha
    }
}

/// Which components enter the combined p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TestMode {
    /// Bonferroni combination of the Chow and variance tests (default).
    #[default]
    Combined,
    /// Chow coefficient test only.
    CoefficientOnly,
}

/// Design matrix [1, X_S] restricted to the given rows.
fn subset_design(data: &EnvDataset, s: &SubsetS, rows: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
    let k = s.len() + 1;
    let mut x = DMatrix::zeros(rows.len(), k);
    for (i, &row) in rows.iter().enumerate() {
        x[(i, 0)] = 1.0;
        for (c, &j) in s.indices().iter().enumerate() {
            x[(i, c + 1)] = data.x[(row, j - 1)];
        }
    }
    let y = DVector::from_fn(rows.len(), |i, _| data.y[rows[i]]);
    (x, y)
}

fn group_fits(
    data: &EnvDataset,
    s: &SubsetS,
    part: &EnvironmentPartition,
) -> Result<Vec<(usize, f64)>> {
    let k = s.len() + 1;
    let mut fits = Vec::with_capacity(part.n_groups());
    for (g, rows) in part.groups.iter().enumerate() {
        if rows.len() <= k {
            return Err(Error::DegenerateGroup(format!(
                "group {g} has {} rows for {k} parameters",
                rows.len()
            )));
        }
        let (x, y) = subset_design(data, s, rows);
        let fit = ols(&x, &y)
            .map_err(|e| Error::DegenerateGroup(format!("group {g}: {e}")))?;
        fits.push((rows.len(), fit.rss));
    }
    Ok(fits)
}

/// Classical Chow F test of coefficient equality across environments:
/// pooled OLS on [1, X_S] against per-environment fits.
pub fn chow_coefficient_test(
    data: &EnvDataset,
    s: &SubsetS,
    part: &EnvironmentPartition,
) -> Result<(f64, f64)> {
    let n = part.total();
    let n_env = part.n_groups();
    let k = s.len() + 1;
    if n <= n_env * k {
        return Err(Error::InvalidArgument(format!(
            "pooled n = {n} too small for {n_env} environments with {k} parameters"
        )));
    }
    let all_rows: Vec<usize> = part.groups.iter().flatten().copied().collect();
    let (x, y) = subset_design(data, s, &all_rows);
    let pooled = ols(&x, &y)?;
    let fits = group_fits(data, s, part)?;
    let rss_split: f64 = fits.iter().map(|&(_, rss)| rss).sum();
    let df1 = ((n_env - 1) * k) as f64;
    let df2 = (n - n_env * k) as f64;
    let num = ((pooled.rss - rss_split) / df1).max(0.0);
    let den = rss_split / df2;
    let f = if den > 0.0 { num / den } else { 0.0 };
    let p = 1.0 - f_cdf(df1, df2, f)?;
    Ok((f, p))
}

/// Two-sided test for equality of per-environment residual variances.
/// Two groups use the variance-ratio F; three or more use Bartlett's test.
pub fn variance_equality_test(
    data: &EnvDataset,
    s: &SubsetS,
    part: &EnvironmentPartition,
) -> Result<(f64, f64)> {
    let k = s.len() + 1;
    let fits = group_fits(data, s, part)?;
    let vars: Vec<(f64, f64)> = fits
        .iter()
        .map(|&(ni, rss)| ((ni - k) as f64, rss / (ni - k) as f64))
        .collect();
    if vars.iter().any(|&(df, _)| df < 1.0) {
        return Err(Error::DegenerateGroup("group too small for variance test".into()));
    }
    if part.n_groups() == 2 {
        let (df1, v1) = vars[0];
        let (df2, v2) = vars[1];
        if v2 == 0.0 && v1 == 0.0 {
            return Ok((1.0, 1.0));
        }
        if v2 == 0.0 {
            return Ok((f64::INFINITY, 0.0));
        }
        let f = v1 / v2;
        let cdf = f_cdf(df1, df2, f)?;
        let p = (2.0 * cdf.min(1.0 - cdf)).min(1.0);
        Ok((f, p))
    } else {
        // Bartlett's statistic, referred to chi-squared with E-1 df.
        let e = part.n_groups() as f64;
        let df_total: f64 = vars.iter().map(|&(df, _)| df).sum();
        let pooled: f64 = vars.iter().map(|&(df, v)| df * v).sum::<f64>() / df_total;
        if pooled == 0.0 {
            return Ok((0.0, 1.0));
        }
        let mut stat = df_total * pooled.ln();
        for &(df, v) in &vars {
            stat -= df * v.max(f64::MIN_POSITIVE).ln();
        }
        let corr = 1.0
            + (vars.iter().map(|&(df, _)| 1.0 / df).sum::<f64>() - 1.0 / df_total)
                / (3.0 * (e - 1.0));
        let stat = (stat / corr).max(0.0);
        let p = 1.0 - crate::numerics::chi2_cdf(stat, e - 1.0)?;
        Ok((stat, p))
    }
}

/// Combined invariance test with Bonferroni over the two components:
/// p = min(1, 2 * min(p_coeff, p_var)).
pub fn test_invariance(
    data: &EnvDataset,
    s: &SubsetS,
    part: &EnvironmentPartition,
    mode: TestMode,
) -> Result<InvarianceTestResult> {
    let (f_coeff, p_coeff) = chow_coefficient_test(data, s, part)?;
    match mode {
        TestMode::CoefficientOnly => Ok(InvarianceTestResult {
            p_value: p_coeff,
            statistic_coeff: f_coeff,
            statistic_var: f64::NAN,
        }),
        TestMode::Combined => {
            let (f_var, p_var) = variance_equality_test(data, s, part)?;
            let p = (2.0 * p_coeff.min(p_var)).min(1.0);
            Ok(InvarianceTestResult {
                p_value: p,
                statistic_coeff: f_coeff,
                statistic_var: f_var,
            })
        }
    }
}
