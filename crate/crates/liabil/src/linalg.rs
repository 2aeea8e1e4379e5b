//! Small dense linear-algebra helpers on symmetric systems.

use nalgebra::{DMatrix, DVector};

/// Solve `a x = b` for symmetric positive-definite `a`, falling back to LU
/// when the Cholesky factorization fails near singularity.
pub(crate) fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(b));
    }
    a.clone().lu().solve(b)
}

pub(crate) fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.inverse());
    }
    a.clone().try_inverse()
}
