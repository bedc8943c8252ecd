//! Least-squares helpers over nalgebra.

use nalgebra::DMatrix;

use crate::{Error, Result};

/// Solves `min ‖A·X − B‖` through a Householder QR of `A`.
///
/// Fails when `A` is (numerically) rank deficient: some diagonal entry of
/// `R` is below `1e-10 · max |R_ii|`.
pub(crate) fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = a.shape();
    if n < p {
        return Err(Error::Numerical(format!(
            "least squares with {n} rows and {p} columns is underdetermined"
        )));
    }
    if b.nrows() != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, design has {n}",
            b.nrows()
        )));
    }
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if diag_max == 0.0 || (0..p).any(|i| r[(i, i)].abs() <= 1e-10 * diag_max) {
        return Err(Error::Numerical("design matrix is rank deficient".into()));
    }
    let qtb = qr.q().transpose() * b;
    r.solve_upper_triangular(&qtb)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))
}
