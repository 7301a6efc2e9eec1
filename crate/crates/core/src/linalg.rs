//! Small dense symmetric solves backed by nalgebra.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

/// Condition number above which an information matrix is inverted by
/// pseudo-inverse instead of a Cholesky solve.
pub const MAX_CONDITION: f64 = 1e12;

pub(crate) fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub(crate) fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solves `a x = b` for symmetric positive-definite `a`; `None` if the
/// Cholesky factorisation fails.
pub fn spd_solve(a: ArrayView2<'_, f64>, b: ArrayView1<'_, f64>) -> Option<Array1<f64>> {
    let chol = to_na(a).cholesky()?;
    let x = chol.solve(&DVector::from_iterator(b.len(), b.iter().copied()));
    Some(Array1::from_iter(x.iter().copied()))
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix via its eigendecomposition.
pub fn symmetric_pinv(a: ArrayView2<'_, f64>) -> Array2<f64> {
    let eig = to_na(a).symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = max * f64::EPSILON * a.nrows() as f64;
    let inv_vals = eig
        .eigenvalues
        .map(|v| if v.abs() > cutoff { 1.0 / v } else { 0.0 });
    let v = &eig.eigenvectors;
    from_na(&(v * DMatrix::from_diagonal(&inv_vals) * v.transpose()))
}

/// Outcome of inverting a symmetric positive semi-definite matrix.
#[derive(Debug, Clone)]
pub struct SymmetricInverse {
    pub inverse: Array2<f64>,
    pub condition: f64,
    /// True when the pseudo-inverse fallback was used.
    pub pseudo: bool,
}

/// Inverts via Cholesky when well conditioned, otherwise by pseudo-inverse.
pub fn symmetric_inverse(a: ArrayView2<'_, f64>) -> SymmetricInverse {
    let m = to_na(a);
    let eig = m.clone().symmetric_eigen();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v.abs());
        hi = hi.max(v.abs());
    }
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition <= MAX_CONDITION {
        if let Some(chol) = m.cholesky() {
            return SymmetricInverse {
                inverse: from_na(&chol.inverse()),
                condition,
                pseudo: false,
            };
        }
    }
    SymmetricInverse {
        inverse: symmetric_pinv(a),
        condition,
        pseudo: true,
    }
}
