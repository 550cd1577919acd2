use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::battery::FunctionBattery;
use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::sdesim::{simulate_range, PathEnsemble, SdeModel, SimConfig};
use crate::stats::{laplace_weights, Estimate};

pub const DEFAULT_LAMBDA_GRID: [f64; 3] = [2.0, 4.0, 8.0];

/// Monte Carlo estimate of `∫₀ᵀ e^{-λt} E[f(X_t)] dt` from a path ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventEstimate {
    pub f_id: String,
    pub lambda: f64,
    pub value: f64,
    pub stderr: f64,
    pub z0: Vec<f64>,
    pub scheme_tag: String,
    /// `e^{-λT} sup|f| / λ`, the neglected part of the integral over `[T, ∞)`.
    pub tail_bound: f64,
    pub n_paths: usize,
}

impl ResolventEstimate {
    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.value, stderr: self.stderr }
    }

    pub fn z_score(&self, other: &ResolventEstimate) -> f64 {
        self.estimate().z_score(&other.estimate())
    }

    /// `|value| ≤ sup|f|/λ + tail + 5·stderr`.
    pub fn respects_maximum_principle(&self, sup: f64) -> bool {
        self.value.abs() <= sup / self.lambda + self.tail_bound + 5.0 * self.stderr
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

pub(crate) fn tail_bound(f: &dyn ScalarField, lambda: f64, horizon: f64) -> f64 {
    f.sup_norm().map_or(f64::INFINITY, |s| (-lambda * horizon).exp() * s / lambda)
}

pub(crate) fn non_finite(f: &dyn ScalarField, z: &[f64]) -> Error {
    Error::Evaluation { point: z.to_vec(), detail: format!("{} is not finite", f.label()) }
}

/// Per-path Laplace integrals `Σᵢ wᵢ f(X_{tᵢ})` in path order.
pub fn resolvent_samples(ens: &PathEnsemble, f: &dyn ScalarField, lambda: f64) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let w = laplace_weights(&ens.times, lambda);
    (0..ens.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for (i, wi) in w.iter().enumerate() {
                let z = ens.state(p, i);
                let v = f.value(z);
                if !v.is_finite() {
                    return Err(non_finite(f, z));
                }
                acc += wi * v;
            }
            Ok(acc)
        })
        .collect()
}

pub fn resolvent_functional(ens: &PathEnsemble, f: &dyn ScalarField, lambda: f64) -> Result<ResolventEstimate> {
    let e = Estimate::from_samples(&resolvent_samples(ens, f, lambda)?);
    Ok(ResolventEstimate {
        f_id: f.label().to_string(),
        lambda,
        value: e.value,
        stderr: e.stderr,
        z0: ens.z0.clone(),
        scheme_tag: ens.scheme_tag.clone(),
        tail_bound: tail_bound(f, lambda, ens.horizon()),
        n_paths: ens.n_paths(),
    })
}

/// Collects per-path Laplace integrals for every (battery member, λ) pair
/// across ensemble chunks, so large runs never hold all paths at once.
pub struct BatteryAccumulator {
    battery: FunctionBattery,
    lambdas: Vec<f64>,
    times: Vec<f64>,
    weights: Vec<Vec<f64>>,
    z0: Vec<f64>,
    scheme_tag: String,
    /// Index `f * n_lambda + l`, values in path order.
    values: Vec<Vec<f64>>,
}

impl BatteryAccumulator {
    pub fn new(battery: FunctionBattery, lambda_grid: &[f64]) -> Result<Self> {
        if lambda_grid.is_empty() {
            return Err(invalid("lambda grid must not be empty"));
        }
        for &l in lambda_grid {
            check_lambda(l)?;
        }
        let values = vec![Vec::new(); battery.len() * lambda_grid.len()];
        Ok(Self {
            battery,
            lambdas: lambda_grid.to_vec(),
            times: Vec::new(),
            weights: Vec::new(),
            z0: Vec::new(),
            scheme_tag: String::new(),
            values,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn add(&mut self, ens: &PathEnsemble) -> Result<()> {
        if self.weights.is_empty() {
            self.weights = self.lambdas.iter().map(|&l| laplace_weights(&ens.times, l)).collect();
            self.times = ens.times.clone();
            self.z0 = ens.z0.clone();
            self.scheme_tag = ens.scheme_tag.clone();
        } else if ens.times != self.times || ens.z0 != self.z0 {
            return Err(invalid("ensemble chunks must share the time grid and starting point"));
        }
        let nf = self.battery.len();
        let nl = self.lambdas.len();
        let nt = self.times.len();
        let members = self.battery.members();
        let weights = &self.weights;
        let rows: Vec<Vec<f64>> = (0..ens.n_paths())
            .into_par_iter()
            .map(|p| {
                let mut out = vec![0.0; nf * nl];
                let mut fv = vec![0.0; nt];
                for (k, f) in members.iter().enumerate() {
                    for (i, v) in fv.iter_mut().enumerate() {
                        let z = ens.state(p, i);
                        *v = f.value(z);
                        if !v.is_finite() {
                            return Err(non_finite(f.as_ref(), z));
                        }
                    }
                    for (l, w) in weights.iter().enumerate() {
                        out[k * nl + l] = w.iter().zip(&fv).map(|(a, b)| a * b).sum();
                    }
                }
                Ok(out)
            })
            .collect::<Result<_>>()?;
        for row in rows {
            for (slot, v) in self.values.iter_mut().zip(row) {
                slot.push(v);
            }
        }
        Ok(())
    }

    /// Estimates ordered by battery member, then λ.
    pub fn finish(&self) -> Vec<ResolventEstimate> {
        let nl = self.lambdas.len();
        let horizon = self.times.last().copied().unwrap_or(0.0);
        let mut out = Vec::with_capacity(self.values.len());
        for (k, f) in self.battery.members().iter().enumerate() {
            for (l, &lambda) in self.lambdas.iter().enumerate() {
                let e = Estimate::from_samples(&self.values[k * nl + l]);
                out.push(ResolventEstimate {
                    f_id: f.label().to_string(),
                    lambda,
                    value: e.value,
                    stderr: e.stderr,
                    z0: self.z0.clone(),
                    scheme_tag: self.scheme_tag.clone(),
                    tail_bound: tail_bound(f.as_ref(), lambda, horizon),
                    n_paths: self.values[k * nl + l].len(),
                });
            }
        }
        out
    }
}

pub fn battery_estimates(ens: &PathEnsemble, battery: &FunctionBattery, lambda_grid: &[f64]) -> Result<Vec<ResolventEstimate>> {
    let mut acc = BatteryAccumulator::new(battery.clone(), lambda_grid)?;
    acc.add(ens)?;
    Ok(acc.finish())
}

/// Simulate `n` paths in chunks of `chunk` and reduce each chunk to battery
/// integrals. Equal to simulating all paths at once and calling
/// [`battery_estimates`].
#[allow(clippy::too_many_arguments)]
pub fn simulate_battery(
    model: &SdeModel,
    z0: &[f64],
    cfg: &SimConfig,
    n: usize,
    seed: u64,
    chunk: usize,
    battery: &FunctionBattery,
    lambda_grid: &[f64],
) -> Result<Vec<ResolventEstimate>> {
    if n < 2 {
        return Err(invalid("need at least 2 paths"));
    }
    let chunk = chunk.max(1) as u64;
    let mut acc = BatteryAccumulator::new(battery.clone(), lambda_grid)?;
    let mut start = 0u64;
    while start < n as u64 {
        let end = (start + chunk).min(n as u64);
        acc.add(&simulate_range(model, z0, cfg, start..end, seed)?)?;
        start = end;
    }
    Ok(acc.finish())
}
