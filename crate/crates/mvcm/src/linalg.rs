//! Small dense linear-algebra helpers used by the estimators.
//!
//! The vectorization convention here is row-major: for an `M1 x M2` matrix
//! `C`, `vec(C) = (c_11, ..., c_1M2, c_21, ..., c_M1M2)`. Every
//! Kronecker-ordered system in this crate is assembled against that
//! convention.

use nalgebra::{DMatrix, DVector};

/// Row-major vectorization of a matrix.
pub fn vec_row_major(c: &DMatrix<f64>) -> DVector<f64> {
    let (rows, cols) = c.shape();
    DVector::from_fn(rows * cols, |k, _| c[(k / cols, k % cols)])
}

/// Kronecker product `C ⊗ D`.
pub fn kronecker(c: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    let (cr, cc) = c.shape();
    let (dr, dc) = d.shape();
    DMatrix::from_fn(cr * dr, cc * dc, |i, j| {
        c[(i / dr, j / dc)] * d[(i % dr, j % dc)]
    })
}

/// Kronecker product of two vectors, `a ⊗ b`.
pub fn kronecker_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (na, nb) = (a.len(), b.len());
    DVector::from_fn(na * nb, |k, _| a[k / nb] * b[k % nb])
}

/// Outer square `a aᵀ` of a vector.
pub fn outer_square(a: &DVector<f64>) -> DMatrix<f64> {
    let n = a.len();
    DMatrix::from_fn(n, n, |i, j| a[i] * a[j])
}

/// Trapezoidal quadrature weights for an ascending grid.
pub fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let m = grid.len();
    let mut w = vec![0.0; m];
    for k in 0..m.saturating_sub(1) {
        let half = 0.5 * (grid[k + 1] - grid[k]);
        w[k] += half;
        w[k + 1] += half;
    }
    w
}

/// Trapezoidal integral of tabulated values over an ascending grid.
pub fn trapezoid_integral(grid: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let mut acc = 0.0;
    for k in 0..grid.len().saturating_sub(1) {
        acc += 0.5 * (grid[k + 1] - grid[k]) * (values[k] + values[k + 1]);
    }
    acc
}
