//! Dense linear-algebra kernels: matrix exponential, controllability
//! Gramians, Kalman index and degenerate Gaussian sampling.

mod expm;
mod gramian;
mod kalman;
mod psd;

pub use expm::mat_exp;
pub use gramian::{exp_integral, gramian, gramian_report, GramianReport, MIN_FIT_TIME};
pub use kalman::{kalman_index, KalmanReport};
pub use psd::{gaussian_sample, psd_factor, PsdMatrix, NEG_EIG_TOL, RANK_TOL, SYMMETRY_TOL};

use nalgebra::DMatrix;

use crate::error::{invalid, Result};

/// Build a square matrix from rows, rejecting ragged or non-finite input.
pub fn square_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(invalid("matrix must be non-empty and square"));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

pub fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    psd::to_rows(m)
}

/// Largest real part among the eigenvalues of `a`.
pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Hilbert–Schmidt (Frobenius) norm, the matrix norm used throughout.
pub fn hs_norm(m: &DMatrix<f64>) -> f64 {
    m.norm()
}
