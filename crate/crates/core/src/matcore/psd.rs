use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng::fill_normal;

/// Relative symmetry tolerance accepted by [`PsdMatrix::new`].
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues above `-NEG_EIG_TOL * λ_max` are treated as round-off and clamped to zero.
pub const NEG_EIG_TOL: f64 = 1e-10;
/// Eigenvalues at or below `RANK_TOL * λ_max` do not count towards the numerical rank.
pub const RANK_TOL: f64 = 1e-12;

/// Symmetric positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PsdMatrix(DMatrix<f64>);

impl PsdMatrix {
    /// Validates symmetry and semidefiniteness, then stores the exactly symmetrised matrix.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(invalid(format!("PSD matrix must be non-empty square, got {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(invalid("PSD matrix has non-finite entries"));
        }
        let scale = m.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        let asym = (&m - m.transpose()).iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if asym > SYMMETRY_TOL * scale {
            return Err(invalid(format!("matrix not symmetric: asymmetry {asym:e} vs scale {scale:e}")));
        }
        let s = symmetrize(m);
        let (min, max) = eig_extremes(&s);
        if min < -NEG_EIG_TOL * max.max(0.0) || (max <= 0.0 && min < 0.0) {
            return Err(Error::NotPsd { min_eig: min, max_eig: max });
        }
        Ok(Self(s))
    }

    /// Wraps a matrix that is symmetric PSD by construction (Gramians, sums of
    /// outer products); only symmetrises.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        Self(symmetrize(m))
    }

    pub fn identity(d: usize) -> Self {
        Self(DMatrix::identity(d, d))
    }

    pub fn zeros(d: usize) -> Self {
        Self(DMatrix::zeros(d, d))
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_row_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Smallest and largest eigenvalue.
    pub fn eig_extremes(&self) -> (f64, f64) {
        eig_extremes(&self.0)
    }

    /// Embed as the upper-left block of a `d x d` zero matrix.
    pub fn lift(&self, d: usize) -> Self {
        let d0 = self.dim();
        let mut m = DMatrix::zeros(d, d);
        m.view_mut((0, 0), (d0, d0)).copy_from(&self.0);
        Self(m)
    }

    /// `log det` computed as a sum of logarithms after symmetric diagonal
    /// (Jacobi) scaling, so that strongly graded matrices such as small-time
    /// Gramians keep relative accuracy in every eigen-direction.
    pub fn log_det(&self) -> Result<f64> {
        let d = self.dim();
        let diag: Vec<f64> = (0..d).map(|i| self.0[(i, i)]).collect();
        if diag.iter().any(|&x| x <= 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        let inv_sqrt: Vec<f64> = diag.iter().map(|x| 1.0 / x.sqrt()).collect();
        let scaled = DMatrix::from_fn(d, d, |i, j| self.0[(i, j)] * inv_sqrt[i] * inv_sqrt[j]);
        let eig = SymmetricEigen::new(scaled);
        let mut log = diag.iter().map(|x| x.ln()).sum::<f64>();
        for &mu in eig.eigenvalues.iter() {
            if mu <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            log += mu.ln();
        }
        Ok(log)
    }
}

impl TryFrom<Vec<Vec<f64>>> for PsdMatrix {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("PSD matrix rows must all have length equal to the row count"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl From<PsdMatrix> for Vec<Vec<f64>> {
    fn from(m: PsdMatrix) -> Self {
        to_rows(&m.0)
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn eig_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = ev.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = ev.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Rectangular factor `F` with `F Fᵀ = S`, one column per eigenvalue above
/// `RANK_TOL · λ_max`, ordered by decreasing eigenvalue.
pub fn psd_factor(s: &PsdMatrix) -> Result<DMatrix<f64>> {
    let d = s.dim();
    let eig = SymmetricEigen::new(s.0.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if max <= 0.0 {
        if min < 0.0 {
            return Err(Error::NotPsd { min_eig: min, max_eig: max });
        }
        return Ok(DMatrix::zeros(d, 0));
    }
    if min < -NEG_EIG_TOL * max {
        return Err(Error::NotPsd { min_eig: min, max_eig: max });
    }
    let mut order: Vec<usize> = (0..d).filter(|&i| eig.eigenvalues[i] > RANK_TOL * max).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut f = DMatrix::zeros(d, order.len());
    for (c, &i) in order.iter().enumerate() {
        let scale = eig.eigenvalues[i].sqrt();
        let v = eig.eigenvectors.column(i);
        // fix the sign so the factor is a deterministic function of S
        let pivot = v.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            f[(r, c)] = sign * scale * v[r];
        }
    }
    Ok(f)
}

/// `n` draws of `mean + F ξ`, `ξ` standard normal of dimension `rank(cov)`.
pub fn gaussian_sample<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &PsdMatrix,
    n: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if mean.len() != cov.dim() {
        return Err(invalid(format!("mean has dimension {} but covariance {}", mean.len(), cov.dim())));
    }
    if n == 0 {
        return Err(invalid("gaussian_sample needs n >= 1"));
    }
    let f = psd_factor(cov)?;
    let mut xi = vec![0.0; f.ncols()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        fill_normal(rng, &mut xi);
        let mut x = mean.clone();
        for (c, &e) in xi.iter().enumerate() {
            for r in 0..x.len() {
                x[r] += f[(r, c)] * e;
            }
        }
        out.push(x);
    }
    Ok(out)
}
