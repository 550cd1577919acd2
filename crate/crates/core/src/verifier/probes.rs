use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::field::ScalarField;
use crate::oukernel::{lp_norm_mc, OUModel, ResolventSampler};
use crate::stats::Estimate;

/// Tensor grid on the box `[lo, hi]` with `per_axis` points per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub per_axis: usize,
}

impl ZGrid {
    pub fn cube(d: usize, half_width: f64, per_axis: usize) -> Self {
        Self { lo: vec![-half_width; d], hi: vec![half_width; d], per_axis }
    }

    /// Same box with the spacing halved.
    pub fn refined(&self) -> Self {
        Self { per_axis: 2 * self.per_axis - 1, ..self.clone() }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.lo.len();
        let n = self.per_axis.max(1);
        let coord = |i: usize, k: usize| {
            if n == 1 {
                0.5 * (self.lo[i] + self.hi[i])
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (n - 1) as f64
            }
        };
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                (0..d)
                    .map(|i| {
                        let k = idx % n;
                        idx /= n;
                        coord(i, k)
                    })
                    .collect()
            })
            .collect()
    }

    /// Volume per grid point for Riemann sums.
    pub fn cell_volume(&self) -> f64 {
        let n = self.per_axis.max(2) as f64;
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) / (n - 1.0)).product()
    }
}

/// `(2k + 1) / 2`: the resolvent maps `Lᵖ` into bounded functions above this exponent.
pub fn integrability_threshold(m: &OUModel) -> f64 {
    (2 * m.k() + 1) as f64 / 2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupLpProbe {
    pub f_id: String,
    pub lambda: f64,
    pub p: f64,
    pub threshold: f64,
    pub sup_estimate: f64,
    pub sup_stderr: f64,
    pub argmax: Vec<f64>,
    pub lp_norm: f64,
    pub lp_stderr: f64,
    /// Empirical `sup|R(λ)f| / ‖f‖_p`; `None` when `‖f‖_p` is zero.
    pub ratio: Option<f64>,
    pub ratio_stderr: Option<f64>,
    pub grid_points: usize,
    pub mc_budget: usize,
}

/// Sup of `|R(λ)f|` over `z_grid` (common random numbers across points)
/// against the Monte Carlo `Lᵖ` norm of `f`.
pub fn probe_sup_lp(
    m: &OUModel,
    f: &dyn ScalarField,
    lambda: f64,
    p: f64,
    z_grid: &[Vec<f64>],
    mc_budget: usize,
    seed: u64,
) -> Result<SupLpProbe> {
    let threshold = integrability_threshold(m);
    if !(p > threshold) {
        return Err(invalid(format!("p = {p} must exceed (2k+1)/2 = {threshold} (k = {})", m.k())));
    }
    if z_grid.is_empty() {
        return Err(invalid("z grid is empty"));
    }
    let sampler = ResolventSampler::new(m, lambda, mc_budget, seed)?;
    let mut best = Estimate { value: 0.0, stderr: 0.0 };
    let mut argmax = z_grid[0].clone();
    for z in z_grid {
        let r = sampler.estimate(f, z)?;
        if r.value.abs() > best.value {
            best = Estimate { value: r.value.abs(), stderr: r.stderr };
            argmax = z.clone();
        }
    }
    let lp = lp_norm_mc(f, m.dim(), p, 50 * mc_budget, seed ^ 0x5eed);
    let (ratio, ratio_stderr) = if lp.value > 0.0 {
        let r = best.value / lp.value;
        let rel = ((best.stderr / best.value.max(f64::MIN_POSITIVE)).powi(2) + (lp.stderr / lp.value).powi(2)).sqrt();
        (Some(r), Some(r * rel))
    } else {
        (None, None)
    };
    Ok(SupLpProbe {
        f_id: f.label().to_string(),
        lambda,
        p,
        threshold,
        sup_estimate: best.value,
        sup_stderr: best.stderr,
        argmax,
        lp_norm: lp.value,
        lp_stderr: lp.stderr,
        ratio,
        ratio_stderr,
        grid_points: z_grid.len(),
        mc_budget,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianProbe {
    pub f_id: String,
    pub lambda: f64,
    pub p: f64,
    pub fd_step: f64,
    /// Riemann-sum `‖D²ₓR(λ)f‖_p` on the grid; `None` when inconclusive.
    pub lp_hessian: Option<f64>,
    pub lp_hessian_stderr: Option<f64>,
    pub lp_f: f64,
    pub ratio: Option<f64>,
    /// Weighted relative noise of the stencil against the second differences.
    pub noise_to_signal: f64,
    pub inconclusive: bool,
    pub grid_points: usize,
    pub mc_budget: usize,
}

/// Second differences of `R(λ)f` in the first `d₀` coordinates on `grid`,
/// every stencil point sharing the same noise paths.
#[allow(clippy::too_many_arguments)]
pub fn probe_second_derivative(
    m: &OUModel,
    f: &dyn ScalarField,
    lambda: f64,
    p: f64,
    grid: &ZGrid,
    fd_step: f64,
    mc_budget: usize,
    seed: u64,
) -> Result<HessianProbe> {
    if !(1e-3..=1e-1).contains(&fd_step) {
        return Err(invalid(format!("fd_step must lie in [1e-3, 1e-1], got {fd_step}")));
    }
    if !(p >= 1.0) {
        return Err(invalid(format!("p must be at least 1, got {p}")));
    }
    if grid.lo.len() != m.dim() {
        return Err(invalid("grid dimension does not match the model"));
    }
    let sampler = ResolventSampler::new(m, lambda, mc_budget, seed)?;
    let d0 = m.d0();
    let h = fd_step;
    let points = grid.points();
    let mut norms = Vec::with_capacity(points.len());
    let mut rels = Vec::with_capacity(points.len());
    let shifted = |z: &[f64], moves: &[(usize, f64)]| -> Result<Vec<f64>> {
        let mut y = z.to_vec();
        for &(i, s) in moves {
            y[i] += s * h;
        }
        sampler.samples(f, &y)
    };
    for z in &points {
        let center = sampler.samples(f, z)?;
        let mut frob2 = 0.0;
        let mut var = 0.0;
        for i in 0..d0 {
            for j in i..d0 {
                let stencil: Vec<f64> = if i == j {
                    let (a, b) = (shifted(z, &[(i, 1.0)])?, shifted(z, &[(i, -1.0)])?);
                    (0..center.len()).map(|k| (a[k] - 2.0 * center[k] + b[k]) / (h * h)).collect()
                } else {
                    let pp = shifted(z, &[(i, 1.0), (j, 1.0)])?;
                    let pm = shifted(z, &[(i, 1.0), (j, -1.0)])?;
                    let mp = shifted(z, &[(i, -1.0), (j, 1.0)])?;
                    let mm = shifted(z, &[(i, -1.0), (j, -1.0)])?;
                    (0..center.len()).map(|k| (pp[k] - pm[k] - mp[k] + mm[k]) / (4.0 * h * h)).collect()
                };
                let e = Estimate::from_samples(&stencil);
                let mult = if i == j { 1.0 } else { 2.0 };
                frob2 += mult * e.value * e.value;
                var += mult * (e.value * e.stderr).powi(2);
            }
        }
        let norm = frob2.sqrt();
        norms.push(norm);
        rels.push(if norm > 0.0 { var.sqrt() / frob2 } else { f64::INFINITY });
    }
    let powered: Vec<f64> = norms.iter().map(|n| n.powf(p)).collect();
    let total: f64 = powered.iter().sum();
    let noise_to_signal = if total > 0.0 {
        powered.iter().zip(&rels).filter(|(w, _)| **w > 0.0).map(|(w, r)| w / total * r).sum()
    } else {
        f64::INFINITY
    };
    let inconclusive = !(noise_to_signal <= 0.5);
    let lp_f = lp_norm_mc(f, m.dim(), p, 50 * mc_budget, seed ^ 0x5eed).value;
    let lp_h = (total * grid.cell_volume()).powf(1.0 / p);
    let (lp_hessian, lp_hessian_stderr, ratio) = if inconclusive {
        (None, None, None)
    } else {
        (Some(lp_h), Some(lp_h * noise_to_signal), (lp_f > 0.0).then(|| lp_h / lp_f))
    };
    Ok(HessianProbe {
        f_id: f.label().to_string(),
        lambda,
        p,
        fd_step,
        lp_hessian,
        lp_hessian_stderr,
        lp_f,
        ratio,
        noise_to_signal,
        inconclusive,
        grid_points: points.len(),
        mc_budget,
    })
}
