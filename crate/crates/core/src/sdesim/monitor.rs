use serde::{Deserialize, Serialize};

use super::ensemble::PathEnsemble;
use super::model::SdeModel;
use super::schemes::{simulate, SimConfig};
use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::rng::{aux_stream, fill_normal};
use crate::stats::Estimate;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `φ(z₀) e^{Ct}`.
    pub bound: Vec<f64>,
    /// Time indices where `mean - 3·stderr > bound`.
    pub violations: Vec<usize>,
    pub c: f64,
}

/// Per-time mean of `φ(Z_{t∧τ})` against the Gronwall bound `φ(z₀)e^{Ct}`.
pub fn lyapunov_monitor(ens: &PathEnsemble, phi: &dyn ScalarField, c: f64) -> Result<LyapunovReport> {
    let phi0 = phi.value(&ens.z0);
    if !phi0.is_finite() {
        return Err(Error::Evaluation { point: ens.z0.clone(), detail: "phi not finite at z0".into() });
    }
    let n = ens.n_paths();
    let mut report = LyapunovReport { times: ens.times.clone(), mean: vec![], stderr: vec![], bound: vec![], violations: vec![], c };
    let mut vals = vec![0.0; n];
    for (i, &t) in ens.times.iter().enumerate() {
        for (p, v) in vals.iter_mut().enumerate() {
            let z = ens.state(p, i);
            *v = phi.value(z);
            if !v.is_finite() {
                return Err(Error::Evaluation {
                    point: z.to_vec(),
                    detail: format!("phi not finite on path {} at time index {i}", ens.first_path + p as u64),
                });
            }
        }
        let e = Estimate::from_samples(&vals);
        let bound = phi0 * (c * t).exp();
        // A zero-variance estimate equal to the bound must not count as a violation.
        let slack = if e.stderr.is_finite() { 3.0 * e.stderr } else { 0.0 };
        if e.value - slack > bound * (1.0 + 1e-12) {
            report.violations.push(i);
        }
        report.mean.push(e.value);
        report.stderr.push(e.stderr);
        report.bound.push(bound);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExitCurve {
    pub radii: Vec<f64>,
    pub horizon: f64,
    /// Estimates of `P(τ_R ≤ t)` for the ball `B(0, R)`.
    pub estimates: Vec<Estimate>,
    /// `φ(z₀)e^{Ct} / min_{|y|=R} φ(y)` when a Lyapunov pair is attached to the model.
    pub chebyshev: Option<Vec<f64>>,
    /// Whether consecutive estimates never increase by more than 3 combined standard errors.
    pub monotone: bool,
    pub diverged_fraction: f64,
}

/// Exit probabilities from `B(0, R)` for every radius, estimated on one
/// ensemble (common random numbers), so the curve is monotone pathwise.
pub fn exit_prob_curve(
    model: &SdeModel,
    z0: &[f64],
    radii: &[f64],
    cfg: &SimConfig,
    n: usize,
    seed: u64,
) -> Result<ExitCurve> {
    let r0 = z0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("radii must be strictly increasing"));
    }
    if radii[0] <= r0 {
        return Err(invalid(format!("every radius must exceed |z0| = {r0}")));
    }
    if n < 2 {
        return Err(invalid("exit_prob_curve needs n >= 2"));
    }
    let mut cfg = cfg.clone();
    cfg.stop = None;
    cfg.record_every = usize::MAX;
    let ens = simulate(model, z0, &cfg, n, seed)?;
    let estimates: Vec<Estimate> = radii
        .iter()
        .map(|&r| {
            let hits = ens.peak_norm.iter().zip(&ens.diverged).filter(|(&pk, &dv)| dv || pk >= r).count();
            let p = hits as f64 / n as f64;
            Estimate { value: p, stderr: (p * (1.0 - p) / n as f64).sqrt() }
        })
        .collect();
    let monotone = estimates.windows(2).all(|w| w[1].value <= w[0].value + 3.0 * (w[0].stderr.hypot(w[1].stderr)));
    let chebyshev = match &model.lyapunov {
        Some(ly) => {
            let top = ly.phi.value(z0) * (ly.c * cfg.horizon).exp();
            Some(radii.iter().map(|&r| top / sphere_min(&*ly.phi, z0.len(), r, seed)).collect())
        }
        None => None,
    };
    Ok(ExitCurve { radii: radii.to_vec(), horizon: cfg.horizon, estimates, chebyshev, monotone, diverged_fraction: ens.diverged_fraction() })
}

/// Sampled minimum of `φ` over the sphere of radius `r`, including the coordinate poles.
fn sphere_min(phi: &dyn ScalarField, d: usize, r: f64, seed: u64) -> f64 {
    let mut best = f64::INFINITY;
    let mut y = vec![0.0; d];
    for i in 0..d {
        for s in [-1.0, 1.0] {
            y.fill(0.0);
            y[i] = s * r;
            best = best.min(phi.value(&y));
        }
    }
    let mut rng = aux_stream(seed, 0x5f3e);
    for _ in 0..4000 {
        fill_normal(&mut rng, &mut y);
        let norm = y.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            y.iter_mut().for_each(|x| *x *= r / norm);
            best = best.min(phi.value(&y));
        }
    }
    best
}
