use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Residual threshold, relative to the candidate scale, for accepting a new
/// direction of the controllable subspace.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KalmanReport {
    /// Smallest `j` such that `e_i, A e_i, …, A^j e_i` (`i < d0`) span ℝ^d;
    /// `None` when the span never reaches ℝ^d.
    pub k: Option<usize>,
    /// Dimension of the span after each power `j = 0..d-1`.
    pub rank_sequence: Vec<usize>,
}

impl KalmanReport {
    pub fn is_hypoelliptic(&self) -> bool {
        self.k.is_some()
    }
}

/// Kalman index of `(A, d0)`.
///
/// Builds an orthonormal basis of the controllable subspace block by block:
/// the candidates at power `j` are `A q` for the basis vectors `q` added at
/// power `j-1`, which spans the same space as `Aʲ e_1..e_{d0}` modulo the
/// earlier blocks while keeping candidate norms bounded by `‖A‖`.
pub fn kalman_index(a: &DMatrix<f64>, d0: usize) -> Result<KalmanReport> {
    let d = a.nrows();
    if !a.is_square() || d == 0 {
        return Err(invalid("kalman_index needs a non-empty square matrix"));
    }
    if d0 == 0 || d0 > d {
        return Err(invalid(format!("kalman_index needs 1 <= d0 <= d, got d0={d0}, d={d}")));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(invalid("kalman_index: non-finite entries"));
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut basis: Vec<DVector<f64>> = (0..d0)
        .map(|i| {
            let mut e = DVector::zeros(d);
            e[i] = 1.0;
            e
        })
        .collect();
    let mut frontier: Vec<DVector<f64>> = basis.clone();
    let mut ranks = vec![basis.len()];
    for _ in 1..d {
        let mut added = Vec::new();
        if basis.len() < d {
            for q in &frontier {
                let cand = a * q;
                if let Some(v) = orthogonal_residual(&basis, cand, RANK_TOL * scale) {
                    basis.push(v.clone());
                    added.push(v);
                    if basis.len() == d {
                        break;
                    }
                }
            }
        }
        frontier = added;
        ranks.push(basis.len());
    }
    let k = ranks.iter().position(|&r| r == d);
    Ok(KalmanReport { k, rank_sequence: ranks })
}

/// Two passes of Gram–Schmidt; returns the normalised residual when its norm exceeds `tol`.
fn orthogonal_residual(basis: &[DVector<f64>], mut v: DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    for _ in 0..2 {
        for b in basis {
            let c = b.dot(&v);
            v.axpy(-c, b, 1.0);
        }
    }
    let n = v.norm();
    (n > tol).then(|| v / n)
}
