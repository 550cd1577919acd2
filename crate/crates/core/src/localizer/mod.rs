//! Localization: a covering of `B̄(0, R)` by small balls on which `Q₀` is
//! nearly constant, cutoff models that agree with the base model on one
//! ball, and the radial truncation family.
//!
//! The cover is built by recursive bisection of a box around the ball. Each
//! leaf box sits inside the open ball `B(z_j, δ_j)` centred at the box centre,
//! so the leaf boxes tile the region and the balls cover it. A leaf is
//! accepted once the sampled oscillation of `Q₀` on `B(z_j, 2δ_j)` is below
//! `γ(η_k)`, where `η_k` is the ellipticity bound of the annulus of `z_j`.

mod cover;
mod cutoff;

pub use cover::{build_cover, verify_cover, Chart, ChartVerdict, CoverAtlas, CoverVerdict, ETA_SAFETY, RADIUS_FLOOR};
pub use cutoff::{localize_model, smoothstep, truncate_model, truncation_eta, LocalizedModel};

/// Smallest and largest eigenvalue of a symmetric `n × n` row-major matrix.
pub(crate) fn eig_range(q: &[f64], n: usize) -> (f64, f64) {
    match n {
        1 => (q[0], q[0]),
        2 => {
            let (a, b, c) = (q[0], 0.5 * (q[1] + q[2]), q[3]);
            let mid = 0.5 * (a + c);
            let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
            (mid - rad, mid + rad)
        }
        _ => {
            let m = nalgebra::DMatrix::from_row_slice(n, n, q);
            let e = m.symmetric_eigen().eigenvalues;
            (e.min(), e.max())
        }
    }
}

pub(crate) fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests;
