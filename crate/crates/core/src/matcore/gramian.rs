use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expm::mat_exp;
use super::psd::{to_rows, PsdMatrix};
use crate::error::{invalid, Result};
use crate::stats::linear_fit;

/// Times at or below this value are excluded from small-time slope fits.
pub const MIN_FIT_TIME: f64 = 1e-8;

/// `Q_t = ∫₀ᵗ e^{sA} Q e^{sAᵀ} ds` via one exponential of the block matrix
/// `[[-A, Q], [0, Aᵀ]]·t` (Van Loan). With `F` that exponential,
/// `Q_t = F₂₂ᵀ F₁₂`.
pub fn gramian(a: &DMatrix<f64>, q: &PsdMatrix, t: f64) -> Result<PsdMatrix> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(invalid(format!("gramian needs t > 0, got {t}")));
    }
    let d = a.nrows();
    if !a.is_square() || q.dim() != d {
        return Err(invalid(format!("gramian: A is {}x{} but Q is {}x{}", a.nrows(), a.ncols(), q.dim(), q.dim())));
    }
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(&(-a));
    block.view_mut((0, d), (d, d)).copy_from(q.matrix());
    block.view_mut((d, d), (d, d)).copy_from(&a.transpose());
    let f = mat_exp(&block, t)?;
    let f12 = f.view((0, d), (d, d));
    let f22 = f.view((d, d), (d, d));
    Ok(PsdMatrix::from_trusted(f22.transpose() * f12))
}

/// `∫₀ʰ e^{sA} ds` from the exponential of `[[A, I], [0, 0]]·h`.
pub fn exp_integral(a: &DMatrix<f64>, h: f64) -> Result<DMatrix<f64>> {
    let d = a.nrows();
    let mut block = DMatrix::zeros(2 * d, 2 * d);
    block.view_mut((0, 0), (d, d)).copy_from(a);
    block.view_mut((0, d), (d, d)).fill_with_identity();
    let f = mat_exp(&block, h)?;
    Ok(f.view((0, d), (d, d)).into_owned())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GramianReport {
    pub times: Vec<f64>,
    pub gramians: Vec<Vec<Vec<f64>>>,
    pub log_dets: Vec<f64>,
    pub min_eigs: Vec<f64>,
    /// Least-squares slope of `log det Q_t` against `log t` over times in
    /// `(MIN_FIT_TIME, 1]`; `None` when fewer than two such times exist.
    pub fitted_slope: Option<f64>,
}

pub fn gramian_report(a: &DMatrix<f64>, q: &PsdMatrix, times: &[f64]) -> Result<GramianReport> {
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("gramian_report: times must be strictly increasing"));
    }
    let mut gramians = Vec::with_capacity(times.len());
    let mut log_dets = Vec::with_capacity(times.len());
    let mut min_eigs = Vec::with_capacity(times.len());
    for &t in times {
        let g = gramian(a, q, t)?;
        log_dets.push(g.log_det()?);
        min_eigs.push(g.eig_extremes().0);
        gramians.push(to_rows(g.matrix()));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(&log_dets)
        .filter(|(&t, ld)| t > MIN_FIT_TIME && t <= 1.0 && ld.is_finite())
        .map(|(t, ld)| (t.ln(), *ld))
        .unzip();
    let fitted_slope = (xs.len() >= 2).then(|| linear_fit(&xs, &ys).0);
    Ok(GramianReport { times: times.to_vec(), gramians, log_dets, min_eigs, fitted_slope })
}
