//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub(crate) fn symmetrize<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Eigenvalues of a symmetric matrix (the strict upper triangle is ignored).
pub fn sym_eigenvalues<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).min()
}

pub fn max_eigenvalue<T: Real>(m: &DMatrix<T>) -> T {
    sym_eigenvalues(m).max()
}

/// `f` applied to the spectrum of a symmetric matrix.
pub fn sym_map<T: Real>(m: &DMatrix<T>, f: impl Fn(T) -> T) -> DMatrix<T> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(f));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Condition number of a symmetric positive semidefinite matrix; infinite when singular.
pub fn spd_condition_number<T: Real>(m: &DMatrix<T>) -> f64 {
    let ev = sym_eigenvalues(m);
    let (lo, hi) = (ev.min().as_f64(), ev.max().as_f64());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solves `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve<T: Real>(m: &DMatrix<T>, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(rhs))
}

pub fn spd_solve_vec<T: Real>(m: &DMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>> {
    let chol = symmetrize(m).cholesky().ok_or(Error::RankDeficient)?;
    Ok(chol.solve(rhs))
}

/// Inverse square root of a symmetric PSD matrix; fails if an eigenvalue is
/// below `rel_tol * max_eigenvalue`.
pub fn sym_inv_sqrt<T: Real>(m: &DMatrix<T>, rel_tol: T) -> Result<DMatrix<T>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let top = eig.eigenvalues.max();
    if top <= T::zero() || eig.eigenvalues.min() <= rel_tol * top {
        return Err(Error::DegenerateDesign);
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| T::one() / v.sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn sym_sqrt<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    sym_map(m, |v| v.max(T::zero()).sqrt())
}

/// Moore–Penrose pseudoinverse with relative singular-value cutoff.
pub fn pinv<T: Real>(m: &DMatrix<T>, rel_tol: T) -> DMatrix<T> {
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.max();
    let cut = rel_tol * top;
    let inv = svd.singular_values.map(|s| if s > cut { T::one() / s } else { T::zero() });
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    vt.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}
