use std::sync::Arc;

use super::cover::CoverAtlas;
use super::{dist, eig_range};
use crate::error::{invalid, Error, Result};
use crate::models::uniform_in_ball;
use crate::rng::aux_stream;
use crate::sdesim::{CoeffFn, Drift, Noise, SdeModel};

/// Quintic smoothstep `6t⁵ − 15t⁴ + 10t³`, clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else {
        t * t * t * (t * (6.0 * t - 15.0) + 10.0)
    }
}

/// Radial cutoff equal to 1 on `|z − c| ≤ r` and 0 on `|z − c| ≥ 2r`.
fn plateau(z: &[f64], c: &[f64], r: f64) -> f64 {
    1.0 - smoothstep((dist(z, c) - r) / r)
}

/// Cutoff of a model around one chart:
/// `Q₀ʲ = ρQ₀ + (1 − ρ)Q₀(z_j)` and `b_j = b₀·1_{B(z_j, δ_j)}`.
#[derive(Clone, Debug)]
pub struct LocalizedModel {
    pub base: SdeModel,
    pub chart: usize,
    pub center: Vec<f64>,
    pub radius: f64,
    pub eta: f64,
    pub gamma: f64,
    model: SdeModel,
}

impl LocalizedModel {
    /// `ρ_j(z)`.
    pub fn bump(&self, z: &[f64]) -> f64 {
        plateau(z, &self.center, self.radius)
    }

    pub fn model(&self) -> &SdeModel {
        &self.model
    }

    pub fn into_model(self) -> SdeModel {
        self.model
    }
}

pub fn localize_model(m: &SdeModel, atlas: &CoverAtlas, j: usize) -> Result<LocalizedModel> {
    let chart = atlas.charts.get(j).ok_or_else(|| invalid(format!("chart {j} out of range ({})", atlas.charts.len())))?;
    if !chart.verified {
        return Err(Error::Precondition(format!("chart {j} is not verified")));
    }
    if m.dim() != atlas.dim {
        return Err(invalid("model dimension does not match the atlas"));
    }
    let c = chart.center.clone();
    let r = chart.radius;
    let d0 = m.d0();
    let mut qc = vec![0.0; d0 * d0];
    m.eval_q0(&c, &mut qc).map_err(|detail| Error::Evaluation { point: c.clone(), detail })?;

    let (base, cq) = (m.clone(), c.clone());
    let noise: CoeffFn = Arc::new(move |z, out| {
        let s = dist(z, &cq);
        if s <= r {
            base.eval_q0(z, out)
        } else if s >= 2.0 * r {
            out.copy_from_slice(&qc);
            Ok(())
        } else {
            let rho = 1.0 - smoothstep((s - r) / r);
            base.eval_q0(z, out)?;
            for (o, q) in out.iter_mut().zip(&qc) {
                *o = rho * *o + (1.0 - rho) * q;
            }
            Ok(())
        }
    });
    let drift = if m.drift_is_zero() {
        Drift::Zero
    } else {
        let (base, cb) = (m.clone(), c.clone());
        Drift::Field(Arc::new(move |z, out| {
            if dist(z, &cb) < r {
                base.eval_b0(z, out)
            } else {
                out.fill(0.0);
                Ok(())
            }
        }))
    };
    let model = SdeModel::new(
        format!("{}-chart{j}", m.label),
        m.a().clone(),
        d0,
        drift,
        Noise::Covariance { f: noise, constant: false },
    )?;
    Ok(LocalizedModel { base: m.clone(), chart: j, center: c, radius: r, eta: chart.eta, gamma: chart.gamma, model })
}

/// Sampled ellipticity `min(λ_min, 1/λ_max)` of `Q₀` on `B̄(0, 2k)`.
pub fn truncation_eta(m: &SdeModel, k: usize) -> Result<f64> {
    let d = m.dim();
    let d0 = m.d0();
    let mut rng = aux_stream(0x7c, k as u64);
    let mut z = vec![0.0; d];
    let mut q = vec![0.0; d0 * d0];
    let mut eta = f64::INFINITY;
    for i in 0..4000 {
        if i > 0 {
            uniform_in_ball(&mut rng, d, 2.0 * k as f64, &mut z);
        }
        m.eval_q0(&z, &mut q).map_err(|detail| Error::Evaluation { point: z.clone(), detail })?;
        let (a, b) = eig_range(&q, d0);
        if !(a > 0.0) || !b.is_finite() {
            return Err(Error::Hypothesis { witness: z.clone(), detail: format!("Q0 not positive definite (min eigenvalue {a:e})") });
        }
        eta = eta.min(a).min(1.0 / b);
    }
    Ok(eta)
}

/// Truncated model `Q₀ᵏ = ψ_kQ₀ + (1 − ψ_k)I`, `b_k = ψ_k b₀` with `ψ_k = 1`
/// on `|z| ≤ k` and `0` on `|z| ≥ 2k`. Its ellipticity constant is
/// `min(truncation_eta(m, k), 1)`.
pub fn truncate_model(m: &SdeModel, k: usize) -> Result<SdeModel> {
    if k == 0 {
        return Err(invalid("truncation level must be at least 1"));
    }
    truncation_eta(m, k)?;
    let kf = k as f64;
    let d0 = m.d0();
    let origin = vec![0.0; m.dim()];
    let (base, o) = (m.clone(), origin.clone());
    let noise: CoeffFn = Arc::new(move |z, out| {
        let psi = plateau(z, &o, kf);
        if psi == 1.0 {
            return base.eval_q0(z, out);
        }
        if psi == 0.0 {
            out.fill(0.0);
        } else {
            base.eval_q0(z, out)?;
            out.iter_mut().for_each(|x| *x *= psi);
        }
        for i in 0..d0 {
            out[i * d0 + i] += 1.0 - psi;
        }
        Ok(())
    });
    let drift = if m.drift_is_zero() {
        Drift::Zero
    } else {
        let base = m.clone();
        Drift::Field(Arc::new(move |z, out| {
            let psi = plateau(z, &origin, kf);
            if psi == 0.0 {
                out.fill(0.0);
                return Ok(());
            }
            base.eval_b0(z, out)?;
            if psi < 1.0 {
                out.iter_mut().for_each(|x| *x *= psi);
            }
            Ok(())
        }))
    };
    SdeModel::new(format!("{}-trunc{k}", m.label), m.a().clone(), d0, drift, Noise::Covariance { f: noise, constant: false })
}
