//! Dense linear algebra, the coordinate-descent Lasso and distribution
//! quantiles underpinning all estimators.

mod dist;
mod lasso;
mod linalg;
mod projector;
mod quantile;

pub use dist::{chi2_cdf, chi2_quantile, f_cdf, f_quantile};
pub use lasso::{lasso_cd, lasso_path_order, lasso_lambda_max};
pub use linalg::{ols, LinearFit};
pub use projector::Projector;
pub use quantile::empirical_quantile;
