use nalgebra::{DMatrix, DVector};

/// Orthogonal projection onto the column space of an anchor matrix.
///
/// Built from a rank-revealing factorization so rank-deficient anchor
/// matrices are handled; rank 0 yields the zero projector.
#[derive(Debug, Clone)]
pub struct Projector {
    /// Orthonormal basis of the column space, n x rank.
    basis: DMatrix<f64>,
    rank: usize,
}

impl Projector {
    /// Rank tolerance is 1e-10 times the spectral norm of `a`.
    pub fn new(a: &DMatrix<f64>) -> Self {
        let n = a.nrows();
        let svd = a.clone().svd(true, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
        let tol = 1e-10 * smax;
        let rank = if smax == 0.0 {
            0
        } else {
            svd.singular_values.iter().filter(|&&s| s > tol).count()
        };
        let u = svd.u.expect("svd with u requested");
        let basis = u.columns(0, rank).into_owned();
        debug_assert_eq!(basis.nrows(), n);
        Projector { basis, rank }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Applies the projection to a vector.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.rank == 0 {
            return DVector::zeros(v.len());
        }
        &self.basis * (self.basis.transpose() * v)
    }

    /// Applies the projection column-wise to a matrix.
    pub fn apply_mat(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.rank == 0 {
            return DMatrix::zeros(m.nrows(), m.ncols());
        }
        &self.basis * (self.basis.transpose() * m)
    }

    /// The complement projection (I - Pi) applied to a vector.
    pub fn apply_complement(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.apply(v)
    }
}
