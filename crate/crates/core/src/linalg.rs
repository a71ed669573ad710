//! Small dense linear-algebra helpers shared by the mapping, simulation and
//! verification code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

const EIGEN_EPS: f64 = f64::EPSILON;
const EIGEN_MAX_ITER: usize = 10_000;

/// Eigenvalues of a symmetric matrix, sorted ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let dim = m.nrows();
    if dim == 0 {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(m.clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or(Error::EigenNoConvergence { dim })?;
    let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Positive definiteness with the relative tolerance `tol`: the smallest
/// eigenvalue must exceed `tol * max|lambda|`.
pub fn is_positive_definite(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    let eig = sym_eigenvalues(m)?;
    Ok(pd_from_spectrum(&eig, tol))
}

pub(crate) fn pd_from_spectrum(eig: &[f64], tol: f64) -> bool {
    let Some(&lo) = eig.first() else {
        return false;
    };
    let scale = eig.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    scale > 0.0 && lo > tol * scale
}

/// Diagonal matrix from a vector.
pub fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Elementwise absolute value.
pub fn abs(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::abs)
}

/// Largest absolute asymmetry `|m_ij - m_ji|` and where it occurs.
pub fn max_asymmetry(m: &DMatrix<f64>) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst.0 {
                worst = (d, i, j);
            }
        }
    }
    worst
}

/// Maximum relative deviation between two sorted spectra.
pub fn spectrum_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let scale = a
        .iter()
        .chain(b)
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}
