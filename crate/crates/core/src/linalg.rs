//! Small dense linear-algebra helpers on top of nalgebra. Inverses are always
//! applied as solves against a factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance below which negative eigenvalues are treated as zero.
const PSD_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    if !m.is_square() {
        return false;
    }
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= tol * scale
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if !is_symmetric(m, 1e-9) {
        return Err(Error::LinearAlgebra(format!("{what} is not symmetric")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::LinearAlgebra(format!("{what} has non-finite entries")));
    }
    let ev = sym_eigenvalues(m);
    let scale = ev.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    if ev.first().is_some_and(|&e| e < -PSD_TOL * scale) {
        return Err(Error::LinearAlgebra(format!(
            "{what} is not positive semi-definite (min eigenvalue {:e})",
            ev[0]
        )));
    }
    Ok(())
}

/// Principal square root of a symmetric PSD matrix via eigendecomposition,
/// clamping tiny negative eigenvalues at zero.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_psd(m, "matrix")?;
    let eig = symmetrize(m).symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    Ok(symmetrize(&(q * DMatrix::from_diagonal(&vals) * q.transpose())))
}

/// `A^{-1} B` for symmetric positive-definite `A`.
pub fn spd_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

pub fn spd_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::LinearAlgebra("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Largest elementwise relative difference, with `floor` guarding near-zero
/// reference entries.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / y.abs().max(x.abs()).max(floor))
        .fold(0.0, f64::max)
}
