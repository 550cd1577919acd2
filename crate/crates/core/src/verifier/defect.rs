use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::resolvent::non_finite;
use crate::error::{invalid, Error, Result};
use crate::field::{FieldRef, ScalarField};
use crate::sdesim::{euler_coupled, GeneratorScratch, PathEnsemble, SdeModel};
use crate::stats::{laplace_weights, Estimate};

/// Paths per work unit; partial sums are combined in unit order.
const UNIT: usize = 64;

/// Window function `h_k` evaluated at an earlier grid time `t_k`.
#[derive(Clone)]
pub struct WindowMark {
    pub time: f64,
    pub f: FieldRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectEstimate {
    pub f_id: String,
    pub t0: f64,
    pub t1: f64,
    pub value: f64,
    pub stderr: f64,
    /// Trapezoid error of the time integral, from second differences of the mean integrand.
    pub quadrature_bound: f64,
    pub n_paths: usize,
}

impl DefectEstimate {
    pub fn within_bounds(&self) -> bool {
        self.value.abs() <= 4.0 * self.stderr + self.quadrature_bound
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolventIdentity {
    pub f_id: String,
    pub lambda: f64,
    /// `λ·Gf − f(z₀) − G(Lf)` on `[0, T]`.
    pub residual: f64,
    pub stderr: f64,
    /// `e^{-λT} sup|f|`, bounding the truncation term `−e^{-λT} E f(X_T)`.
    pub tail_bound: f64,
    pub quadrature_bound: f64,
    pub n_paths: usize,
}

impl ResolventIdentity {
    pub fn within_bounds(&self) -> bool {
        self.residual.abs() <= 4.0 * self.stderr + self.tail_bound + self.quadrature_bound + 1e-12
    }
}

fn time_index(times: &[f64], t: f64) -> Result<usize> {
    times
        .iter()
        .position(|&s| (s - t).abs() <= 1e-9 * t.abs().max(1.0))
        .ok_or_else(|| invalid(format!("time {t} is not on the ensemble grid")))
}

fn require_hessian(f: &dyn ScalarField) -> Result<()> {
    if !f.has_hessian() || !f.has_gradient() {
        return Err(Error::Capability(format!("{} lacks gradient/Hessian evaluators", f.label())));
    }
    Ok(())
}

fn check_model(ens: &PathEnsemble, m: &SdeModel) -> Result<()> {
    if ens.dim != m.dim() {
        return Err(invalid("model and ensemble dimensions differ"));
    }
    Ok(())
}

/// Largest `h² |g''|` over a possibly non-uniform grid.
fn curvature(times: &[f64], g: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for i in 1..g.len().saturating_sub(1) {
        let (h0, h1) = (times[i] - times[i - 1], times[i + 1] - times[i]);
        let g2 = 2.0 * ((g[i + 1] - g[i]) / h1 - (g[i] - g[i - 1]) / h0) / (h0 + h1);
        worst = worst.max(h0.max(h1).powi(2) * g2.abs());
    }
    worst
}

struct Window<'a> {
    i0: usize,
    i1: usize,
    marks: Vec<(usize, &'a dyn ScalarField)>,
}

impl<'a> Window<'a> {
    fn new(times: &[f64], t0: f64, t1: f64, marks: &'a [WindowMark]) -> Result<Self> {
        if !(t1 > t0) {
            return Err(invalid(format!("need t0 < t1, got ({t0}, {t1})")));
        }
        let i0 = time_index(times, t0)?;
        let i1 = time_index(times, t1)?;
        let marks = marks
            .iter()
            .map(|mk| {
                if mk.time > t0 + 1e-12 {
                    return Err(invalid(format!("window time {} is after t0 = {t0}", mk.time)));
                }
                Ok((time_index(times, mk.time)?, mk.f.as_ref()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { i0, i1, marks })
    }

    /// Defect statistic of one path; `g` accumulates `Lf·∏h` per grid point.
    fn statistic(
        &self,
        ens: &PathEnsemble,
        p: usize,
        f: &dyn ScalarField,
        m: &SdeModel,
        s: &mut GeneratorScratch,
        g: &mut [f64],
    ) -> Result<f64> {
        let mut weight = 1.0;
        for (i, h) in &self.marks {
            let z = ens.state(p, *i);
            weight *= h.value(z);
        }
        let times = &ens.times;
        let mut integral = 0.0;
        let mut prev = 0.0;
        for i in self.i0..=self.i1 {
            let z = ens.state(p, i);
            let lf = m.generator_with(f, z, s)?;
            if !lf.is_finite() {
                return Err(Error::Evaluation { point: z.to_vec(), detail: "Lf is not finite".into() });
            }
            g[i - self.i0] += lf * weight;
            if i > self.i0 {
                integral += 0.5 * (times[i] - times[i - 1]) * (prev + lf);
            }
            prev = lf;
        }
        let (a, b) = (f.value(ens.state(p, self.i0)), f.value(ens.state(p, self.i1)));
        if !(a.is_finite() && b.is_finite()) {
            return Err(non_finite(f, ens.state(p, self.i1)));
        }
        Ok((b - a - integral) * weight)
    }

    /// Per-path statistics and the path-mean integrand per grid point.
    fn run(&self, ens: &PathEnsemble, f: &dyn ScalarField, m: &SdeModel) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = ens.n_paths();
        let len = self.i1 - self.i0 + 1;
        let units: Vec<(Vec<f64>, Vec<f64>)> = (0..n.div_ceil(UNIT))
            .into_par_iter()
            .map(|u| {
                let mut s = GeneratorScratch::new(m.dim(), m.d0());
                let mut g = vec![0.0; len];
                let stats = (u * UNIT..((u + 1) * UNIT).min(n))
                    .map(|p| self.statistic(ens, p, f, m, &mut s, &mut g))
                    .collect::<Result<Vec<_>>>()?;
                Ok((stats, g))
            })
            .collect::<Result<_>>()?;
        let mut stats = Vec::with_capacity(n);
        let mut g = vec![0.0; len];
        for (s, gu) in units {
            stats.extend(s);
            g.iter_mut().zip(gu).for_each(|(a, b)| *a += b);
        }
        g.iter_mut().for_each(|x| *x /= n as f64);
        Ok((stats, g))
    }
}

/// `E[(f(X_{t₁}) − f(X_{t₀}) − ∫_{t₀}^{t₁} Lf(X_s) ds)·∏ₖ hₖ(X_{tₖ})]` per time pair,
/// with the time integral by the trapezoid rule on the path grid.
pub fn martingale_defect(
    ens: &PathEnsemble,
    f: &dyn ScalarField,
    m: &SdeModel,
    t_pairs: &[(f64, f64)],
    marks: &[WindowMark],
) -> Result<Vec<DefectEstimate>> {
    require_hessian(f)?;
    check_model(ens, m)?;
    if ens.n_paths() < 2 {
        return Err(invalid("need at least 2 paths"));
    }
    t_pairs
        .iter()
        .map(|&(t0, t1)| {
            let w = Window::new(&ens.times, t0, t1, marks)?;
            let (stats, g) = w.run(ens, f, m)?;
            let e = Estimate::from_samples(&stats);
            Ok(DefectEstimate {
                f_id: f.label().to_string(),
                t0,
                t1,
                value: e.value,
                stderr: e.stderr,
                quadrature_bound: (t1 - t0) * curvature(&ens.times[w.i0..=w.i1], &g) / 12.0,
                n_paths: stats.len(),
            })
        })
        .collect()
}

pub fn resolvent_identity_check(ens: &PathEnsemble, f: &dyn ScalarField, m: &SdeModel, lambda: f64) -> Result<ResolventIdentity> {
    require_hessian(f)?;
    check_model(ens, m)?;
    if !(lambda > 0.0) {
        return Err(invalid(format!("lambda must be positive, got {lambda}")));
    }
    let n = ens.n_paths();
    let nt = ens.n_times();
    let w = laplace_weights(&ens.times, lambda);
    let f0 = f.value(&ens.z0);
    let units: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..n.div_ceil(UNIT))
        .into_par_iter()
        .map(|u| {
            let mut s = GeneratorScratch::new(m.dim(), m.d0());
            let mut gf = vec![0.0; nt];
            let mut gl = vec![0.0; nt];
            let mut res = Vec::with_capacity(UNIT);
            for p in u * UNIT..((u + 1) * UNIT).min(n) {
                let (mut a, mut b) = (0.0, 0.0);
                for i in 0..nt {
                    let z = ens.state(p, i);
                    let fv = f.value(z);
                    let lf = m.generator_with(f, z, &mut s)?;
                    if !(fv.is_finite() && lf.is_finite()) {
                        return Err(non_finite(f, z));
                    }
                    a += w[i] * fv;
                    b += w[i] * lf;
                    gf[i] += fv;
                    gl[i] += lf;
                }
                res.push(lambda * a - f0 - b);
            }
            Ok((res, gf, gl))
        })
        .collect::<Result<_>>()?;
    let mut res = Vec::with_capacity(n);
    let mut gf = vec![0.0; nt];
    let mut gl = vec![0.0; nt];
    for (r, a, b) in units {
        res.extend(r);
        gf.iter_mut().zip(a).for_each(|(x, y)| *x += y / n as f64);
        gl.iter_mut().zip(b).for_each(|(x, y)| *x += y / n as f64);
    }
    let e = Estimate::from_samples(&res);
    let horizon = ens.horizon();
    Ok(ResolventIdentity {
        f_id: f.label().to_string(),
        lambda,
        residual: e.value,
        stderr: e.stderr,
        tail_bound: f.sup_norm().map_or(f64::INFINITY, |s| (-lambda * horizon).exp() * s),
        quadrature_bound: (curvature(&ens.times, &gf) + curvature(&ens.times, &gl) / lambda) / 8.0,
        n_paths: n,
    })
}

/// Defect at steps `h`, `h/2`, `h/4` from coupled Euler–Maruyama paths.
/// The systematic part at step `s` is estimated as `2(D_s − D_{s/2})`, whose
/// coupled differences have small variance; `ratio` compares the two
/// systematic parts and is 2 for a defect linear in the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectRatio {
    pub f_id: String,
    pub h: f64,
    /// Raw defects at `h`, `h/2`, `h/4`.
    pub defects: Vec<Estimate>,
    pub systematic_h: Estimate,
    pub systematic_half: Estimate,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub n_paths: usize,
}

impl DefectRatio {
    pub fn in_band(&self, lo: f64, hi: f64) -> bool {
        self.ratio >= lo && self.ratio <= hi
    }
}

#[allow(clippy::too_many_arguments)]
pub fn defect_ratio(
    m: &SdeModel,
    z0: &[f64],
    fields: &[FieldRef],
    t_pair: (f64, f64),
    marks: &[WindowMark],
    h: f64,
    n: usize,
    seed: u64,
    chunk: usize,
) -> Result<Vec<DefectRatio>> {
    for f in fields {
        require_hessian(f.as_ref())?;
    }
    if n < 2 {
        return Err(invalid("need at least 2 paths"));
    }
    let (t0, t1) = t_pair;
    let nf = fields.len();
    // raw[f][level] per path, level 0 finest
    let mut raw = vec![[Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)]; nf];
    let mut start = 0u64;
    while start < n as u64 {
        let end = (start + chunk.max(1) as u64).min(n as u64);
        let levels = euler_coupled(m, z0, h / 4.0, 3, t1, start..end, seed)?;
        for (lv, ens) in levels.iter().enumerate() {
            let w = Window::new(&ens.times, t0, t1, marks)?;
            for (k, f) in fields.iter().enumerate() {
                let (stats, _) = w.run(ens, f.as_ref(), m)?;
                raw[k][lv].extend(stats);
            }
        }
        start = end;
    }
    Ok(fields
        .iter()
        .zip(raw)
        .map(|(f, [fine, mid, coarse])| {
            let d1: Vec<f64> = coarse.iter().zip(&mid).map(|(a, b)| a - b).collect();
            let d2: Vec<f64> = mid.iter().zip(&fine).map(|(a, b)| a - b).collect();
            let (e1, e2) = (Estimate::from_samples(&d1), Estimate::from_samples(&d2));
            let ratio = e1.value / e2.value;
            // delta method with the covariance of the paired differences
            let nn = d1.len() as f64;
            let cov = d1.iter().zip(&d2).map(|(a, b)| (a - e1.value) * (b - e2.value)).sum::<f64>() / (nn - 1.0) / nn;
            let var = (e1.stderr.powi(2) + ratio * ratio * e2.stderr.powi(2) - 2.0 * ratio * cov) / (e2.value * e2.value);
            let scale = |e: Estimate| Estimate { value: 2.0 * e.value, stderr: 2.0 * e.stderr };
            DefectRatio {
                f_id: f.label().to_string(),
                h,
                defects: vec![Estimate::from_samples(&coarse), Estimate::from_samples(&mid), Estimate::from_samples(&fine)],
                systematic_h: scale(e1),
                systematic_half: scale(e2),
                ratio,
                ratio_stderr: var.max(0.0).sqrt(),
                n_paths: d1.len(),
            }
        })
        .collect())
}
