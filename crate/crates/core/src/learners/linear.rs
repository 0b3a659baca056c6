use nalgebra::{DMatrix, DVector};

use super::Predictor;
use crate::error::Result;
use crate::numerics::ols;

/// An OLS fit with intercept.
#[derive(Debug, Clone)]
pub struct FittedLinear {
    pub intercept: f64,
    pub beta: DVector<f64>,
}

pub fn fit_linear(u: &DVector<f64>, x: &DMatrix<f64>) -> Result<FittedLinear> {
    let n = x.nrows();
    let p = x.ncols();
    let mut design = DMatrix::zeros(n, p + 1);
    design.column_mut(0).fill(1.0);
    design.view_mut((0, 1), (n, p)).copy_from(x);
    let fit = ols(&design, u)?;
    Ok(FittedLinear {
        intercept: fit.beta[0],
        beta: fit.beta.rows(1, p).into_owned(),
    })
}

impl Predictor for FittedLinear {
    fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(x.ncols(), self.beta.len(), "feature dimension mismatch");
        x * &self.beta + DVector::from_element(x.nrows(), self.intercept)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn randn(rng: &mut impl Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    #[test]
    fn exact_recovery_on_noiseless_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(95);
        let x = DMatrix::from_fn(40, 3, |_, _| randn(&mut rng));
        let u = DVector::from_fn(40, |i, _| 1.2 - 0.7 * x[(i, 0)] + 2.0 * x[(i, 2)]);
        let fit = fit_linear(&u, &x).unwrap();
        assert!((fit.intercept - 1.2).abs() < 1e-9);
        assert!((fit.beta[0] + 0.7).abs() < 1e-9);
        assert!(fit.beta[1].abs() < 1e-9);
        assert!((fit.beta[2] - 2.0).abs() < 1e-9);
        assert!((fit.predict(&x) - u).amax() < 1e-9);
    }

    #[test]
    fn matches_normal_equation_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(96);
        let n = 50;
        let x = DMatrix::from_fn(n, 2, |_, _| randn(&mut rng));
        let u = DVector::from_fn(n, |_, _| randn(&mut rng));
        let fit = fit_linear(&u, &x).unwrap();

        let mut d = DMatrix::zeros(n, 3);
        d.column_mut(0).fill(1.0);
        d.view_mut((0, 1), (n, 2)).copy_from(&x);
        let oracle = (d.transpose() * &d).try_inverse().unwrap() * d.transpose() * &u;
        assert!((fit.intercept - oracle[0]).abs() < 1e-9);
        assert!((fit.beta[0] - oracle[1]).abs() < 1e-9);
        assert!((fit.beta[1] - oracle[2]).abs() < 1e-9);
    }

    #[test]
    fn intercept_is_mean_on_constant_design() {
        // No covariates: the design is the constant column alone.
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0, 6.0]);
        let x = DMatrix::<f64>::zeros(4, 0);
        let fit = fit_linear(&u, &x).unwrap();
        assert!((fit.intercept - 3.0).abs() < 1e-12);
        assert!(fit.predict(&x).iter().all(|&v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let x = DMatrix::from_fn(30, 2, |_, _| randn(&mut rng));
        let u = DVector::from_fn(30, |_, _| randn(&mut rng));
        let f1 = fit_linear(&u, &x).unwrap();
        let f2 = fit_linear(&(3.0 * &u), &x).unwrap();
        let grid = DMatrix::from_fn(20, 2, |_, _| randn(&mut rng));
        assert!((3.0 * f1.predict(&grid) - f2.predict(&grid)).amax() < 1e-9);
    }
}
