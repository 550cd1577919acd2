//! Exact analytics and sampling for the constant-coefficient hypoelliptic
//! Ornstein–Uhlenbeck process `dZ = AZ dt + √Q dW`, `Q = diag-block(Q₀, 0)`.
//!
//! The transition law is Gaussian with mean `e^{tA} z` and covariance the
//! controllability Gramian `Q_t`, so the semigroup, its gradient and the
//! resolvent are all estimated from exact draws; no time discretisation
//! enters except the Laplace quadrature of the resolvent.

mod step;

pub use step::LinearStep;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::field::ScalarField;
use crate::matcore::{gramian, kalman_index, mat_exp, psd_factor, spectral_abscissa, KalmanReport, PsdMatrix};
use crate::rng::{aux_stream, fill_normal, path_stream};
use crate::sdesim::PathEnsemble;
use crate::stats::{geomspace, laplace_weights, linear_fit, Estimate};

/// Default Laplace quadrature: geometric nodes on `[T_MIN, max(10, 12/λ)]`.
pub const LAPLACE_T_MIN: f64 = 1e-4;
pub const LAPLACE_NODES: usize = 200;
/// Default small-time window for determinant slope fits.
pub const SLOPE_GRID: (f64, f64, usize) = (1e-4, 0.5, 12);

/// Frozen-coefficient OU model.
#[derive(Debug, Clone)]
pub struct OUModel {
    a: DMatrix<f64>,
    q0: PsdMatrix,
    q: PsdMatrix,
    kalman: KalmanReport,
    /// Ellipticity constant of `Q₀`: `η|h|² ≤ ⟨Q₀h,h⟩ ≤ η⁻¹|h|²`.
    pub eta: f64,
    /// Spectral abscissa of `A`.
    pub abscissa: f64,
    /// Growth bound `‖e^{tA}‖ ≤ M e^{ωt}` (Hilbert–Schmidt norm).
    pub omega: f64,
    pub growth_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolventValue {
    pub value: f64,
    pub stderr: f64,
    /// Bound on the truncated tail `∫_{T_max}^∞ e^{-λt} P_t f dt`.
    pub tail_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
    /// The lower bound `2k+1` on the slope.
    pub bound: usize,
}

impl DetFit {
    pub fn satisfies_bound(&self) -> bool {
        self.slope >= self.bound as f64 - 0.05
    }
}

impl OUModel {
    /// `A` is `d × d`; `q0` is the `d0 × d0` positive definite noise block.
    pub fn new(a: DMatrix<f64>, q0: PsdMatrix) -> Result<Self> {
        let d = a.nrows();
        let d0 = q0.dim();
        if !a.is_square() || d0 > d {
            return Err(invalid(format!("OU model: A is {}x{}, Q0 is {d0}x{d0}", a.nrows(), a.ncols())));
        }
        let (lo, hi) = q0.eig_extremes();
        if !(lo > 0.0) {
            return Err(Error::Hypothesis { witness: vec![], detail: format!("Q0 not positive definite (min eigenvalue {lo:e})") });
        }
        let kalman = kalman_index(&a, d0)?;
        if kalman.k.is_none() {
            return Err(Error::Hypothesis {
                witness: vec![],
                detail: format!("Kalman condition fails: ranks {:?} never reach {d}", kalman.rank_sequence),
            });
        }
        let eta = lo.min(1.0 / hi);
        let abscissa = spectral_abscissa(&a);
        let omega = abscissa + 0.5;
        let growth_m = growth_constant(&a, omega)?;
        let q = q0.lift(d);
        Ok(Self { a, q0, q, kalman, eta, abscissa, omega, growth_m })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn d0(&self) -> usize {
        self.q0.dim()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q0(&self) -> &PsdMatrix {
        &self.q0
    }

    /// Lifted noise covariance `diag-block(Q₀, 0)`.
    pub fn q(&self) -> &PsdMatrix {
        &self.q
    }

    pub fn kalman(&self) -> &KalmanReport {
        &self.kalman
    }

    pub fn k(&self) -> usize {
        self.kalman.k.expect("validated at construction")
    }

    /// Integrability exponent used by the Lᵖ probes: `max(2, ⌈(2k+1)/2⌉ + 1)`.
    pub fn p_default(&self) -> f64 {
        let half = ((2 * self.k() + 1) as f64 / 2.0).ceil();
        (half + 1.0).max(2.0)
    }

    /// Smallest admissible resolvent parameter is anything strictly above this floor.
    pub fn lambda_min(&self) -> f64 {
        let trace = self.a.trace();
        0.0f64.max(self.abscissa).max(-trace / self.p_default()) + 1.0
    }

    /// Gaussian transition law of `Z_t` started at `z`.
    pub fn ou_transition(&self, z: &[f64], t: f64) -> Result<(DVector<f64>, PsdMatrix)> {
        self.check_point(z)?;
        if !(t > 0.0) {
            return Err(invalid(format!("ou_transition needs t > 0, got {t}")));
        }
        let mean = mat_exp(&self.a, t)? * DVector::from_row_slice(z);
        Ok((mean, gramian(&self.a, &self.q, t)?))
    }

    fn check_point(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(invalid(format!("point has dimension {}, model {}", z.len(), self.dim())));
        }
        Ok(())
    }

    /// One exact transition over a step of length `h`.
    pub fn step(&self, h: f64) -> Result<LinearStep> {
        let phi = mat_exp(&self.a, h)?;
        let factor = psd_factor(&gramian(&self.a, &self.q, h)?)?;
        Ok(LinearStep::new(&phi, &factor))
    }

    /// Exact-in-law path sampling on `times` (starting at 0) through the
    /// Markov recursion `Z_{t+h} = e^{hA} Z_t + N(0, Q_h)`.
    pub fn ou_sample_path(&self, z0: &[f64], times: &[f64], n: usize, seed: u64) -> Result<PathEnsemble> {
        self.check_point(z0)?;
        if times.first() != Some(&0.0) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("ou_sample_path needs a strictly increasing grid starting at 0"));
        }
        let d = self.dim();
        let mut steps: Vec<LinearStep> = Vec::with_capacity(times.len() - 1);
        for w in times.windows(2) {
            let h = w[1] - w[0];
            match steps.iter().position(|s| s.h == h) {
                Some(i) => steps.push(steps[i].clone()),
                None => {
                    let mut s = self.step(h)?;
                    s.h = h;
                    steps.push(s);
                }
            }
        }
        let nt = times.len();
        let mut states = vec![0.0; n * nt * d];
        states.par_chunks_mut(nt * d).enumerate().for_each(|(p, path)| {
            let mut rng = path_stream(seed, p as u64);
            let mut xi = vec![0.0; d];
            path[..d].copy_from_slice(z0);
            for (i, s) in steps.iter().enumerate() {
                fill_normal(&mut rng, &mut xi[..s.rank]);
                let (prev, next) = path[i * d..(i + 2) * d].split_at_mut(d);
                s.apply(prev, &xi[..s.rank], next);
            }
        });
        let peak_norm = (0..n)
            .map(|p| {
                states[p * nt * d..(p + 1) * nt * d]
                    .chunks(d)
                    .map(|z| z.iter().map(|x| x * x).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
            .collect();
        Ok(PathEnsemble {
            dim: d,
            times: times.to_vec(),
            states,
            exit_time: vec![None; n],
            stopped: vec![false; n],
            diverged: vec![false; n],
            peak_norm,
            seed,
            first_path: 0,
            scheme_tag: "ou-exact".into(),
            step: times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
            z0: z0.to_vec(),
        })
    }

    /// Monte Carlo estimate of `P_t f(z) = E f(Z_t^z)`.
    pub fn semigroup_apply(&self, f: &dyn ScalarField, t: f64, z: &[f64], n: usize, seed: u64) -> Result<Estimate> {
        if n < 2 {
            return Err(invalid("semigroup_apply needs n >= 2"));
        }
        let (mean, cov) = self.ou_transition(z, t)?;
        let factor = psd_factor(&cov)?;
        let step = LinearStep::new(&DMatrix::identity(self.dim(), self.dim()), &factor);
        let values = self.sample_map(&step, mean.as_slice(), n, seed, |x| {
            let v = f.value(x);
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation { point: x.to_vec(), detail: format!("{} is not finite", f.label()) })
            }
        })?;
        Ok(Estimate::from_samples(&values))
    }

    /// Estimate of `⟨D P_t f(z), h⟩ = E ⟨Df(Z_t^z), e^{tA} h⟩`.
    pub fn semigroup_gradient(
        &self,
        f: &dyn ScalarField,
        t: f64,
        z: &[f64],
        dir: &[f64],
        n: usize,
        seed: u64,
    ) -> Result<Estimate> {
        if !f.has_gradient() {
            return Err(Error::Capability(format!("{} has no gradient evaluator", f.label())));
        }
        self.check_point(dir)?;
        if n < 2 {
            return Err(invalid("semigroup_gradient needs n >= 2"));
        }
        let (mean, cov) = self.ou_transition(z, t)?;
        let pushed = mat_exp(&self.a, t)? * DVector::from_row_slice(dir);
        let factor = psd_factor(&cov)?;
        let step = LinearStep::new(&DMatrix::identity(self.dim(), self.dim()), &factor);
        let d = self.dim();
        let values = self.sample_map(&step, mean.as_slice(), n, seed, |x| {
            let mut g = vec![0.0; d];
            f.gradient(x, &mut g);
            let v: f64 = g.iter().zip(pushed.iter()).map(|(a, b)| a * b).sum();
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Evaluation { point: x.to_vec(), detail: format!("gradient of {} not finite", f.label()) })
            }
        })?;
        Ok(Estimate::from_samples(&values))
    }

    fn sample_map<F>(&self, step: &LinearStep, mean: &[f64], n: usize, seed: u64, g: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64]) -> Result<f64> + Sync,
    {
        let d = self.dim();
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = path_stream(seed, i as u64);
                let mut xi = vec![0.0; step.rank];
                let mut x = vec![0.0; d];
                fill_normal(&mut rng, &mut xi);
                step.apply(mean, &xi, &mut x);
                g(&x)
            })
            .collect()
    }

    /// Monte Carlo estimate of the resolvent `∫₀^∞ e^{-λt} P_t f(z) dt`
    /// with the default quadrature.
    pub fn resolvent_apply(&self, f: &dyn ScalarField, lambda: f64, z: &[f64], n: usize, seed: u64) -> Result<ResolventValue> {
        self.resolvent_apply_with(f, lambda, z, n, seed, LAPLACE_NODES)
    }

    /// As [`resolvent_apply`](Self::resolvent_apply) with `nodes` quadrature nodes.
    ///
    /// Each sample is one exact OU path on the node grid; its Laplace
    /// integral uses exponentially fitted trapezoid weights, and the segment
    /// `[0, t_min]` uses `f(z)` in place of `P_t f(z)`.
    pub fn resolvent_apply_with(
        &self,
        f: &dyn ScalarField,
        lambda: f64,
        z: &[f64],
        n: usize,
        seed: u64,
        nodes: usize,
    ) -> Result<ResolventValue> {
        let sampler = ResolventSampler::new_streaming(self, lambda, nodes)?;
        sampler.estimate_streaming(f, z, n, seed)
    }

    /// Least-squares slope of `log det Q_t` against `log t` on `t_grid`.
    pub fn det_smalltime_fit(&self, t_grid: &[f64]) -> Result<DetFit> {
        if t_grid.len() < 8 {
            return Err(invalid("det_smalltime_fit needs at least 8 grid points"));
        }
        if t_grid.iter().any(|&t| !(t > 0.0)) || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("det_smalltime_fit needs an increasing positive grid"));
        }
        let mut xs = Vec::with_capacity(t_grid.len());
        let mut ys = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let ld = gramian(&self.a, &self.q, t)?.log_det()?;
            if !ld.is_finite() {
                return Err(Error::NumericRange(format!("det Q_t underflows at t = {t:e}")));
            }
            xs.push(t.ln());
            ys.push(ld);
        }
        let (slope, intercept, residual) = linear_fit(&xs, &ys);
        Ok(DetFit { slope, intercept, residual, bound: 2 * self.k() + 1 })
    }

    /// Default slope fit on 12 geometric points in `[1e-4, 0.5]`.
    pub fn det_slope_default(&self) -> Result<DetFit> {
        let (lo, hi, n) = SLOPE_GRID;
        self.det_smalltime_fit(&geomspace(lo, hi, n))
    }
}

fn growth_constant(a: &DMatrix<f64>, omega: f64) -> Result<f64> {
    let mut m = 1.0f64;
    let mut grid = vec![0.0];
    grid.extend(geomspace(1e-3, 50.0, 120));
    for t in grid {
        let n = mat_exp(a, t)?.norm() * (-omega * t).exp();
        m = m.max(n);
    }
    Ok(m)
}

/// Laplace quadrature plus the OU noise paths needed to estimate
/// `R(λ)f(z)` at many points `z` with common random numbers.
///
/// `Z_t^z = e^{tA} z + N_t` where the noise path `N` does not depend on `z`;
/// the stored variant keeps `N` on the node grid for every sample so that
/// second differences in `z` are computed from identical noise.
pub struct ResolventSampler {
    pub lambda: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub head_weight: f64,
    pub tail_factor: f64,
    dim: usize,
    /// `e^{t_i A}` row-major, one per node.
    flows: Vec<Vec<f64>>,
    steps: Vec<LinearStep>,
    noise: Vec<f64>,
    n: usize,
}

impl ResolventSampler {
    fn new_streaming(m: &OUModel, lambda: f64, nodes: usize) -> Result<Self> {
        let lmin = m.lambda_min();
        if !(lambda > lmin) {
            return Err(invalid(format!("resolvent needs lambda > lambda_min = {lmin}, got {lambda}")));
        }
        if nodes < 2 {
            return Err(invalid("Laplace quadrature needs at least 2 nodes"));
        }
        let t_max = 10f64.max(12.0 / lambda);
        let grid = geomspace(LAPLACE_T_MIN, t_max, nodes);
        let weights = laplace_weights(&grid, lambda);
        let head_weight = -(-lambda * LAPLACE_T_MIN).exp_m1() / lambda;
        let tail_factor = (-lambda * t_max).exp() / lambda;
        let d = m.dim();
        let mut flows = Vec::with_capacity(nodes);
        let mut steps = Vec::with_capacity(nodes);
        let mut prev = 0.0;
        for &t in &grid {
            let e = mat_exp(m.a(), t)?;
            flows.push((0..d * d).map(|k| e[(k / d, k % d)]).collect());
            steps.push(m.step(t - prev)?);
            prev = t;
        }
        Ok(Self { lambda, nodes: grid, weights, head_weight, tail_factor, dim: d, flows, steps, noise: Vec::new(), n: 0 })
    }

    /// Sampler with `n` stored noise paths drawn from `seed`.
    pub fn new(m: &OUModel, lambda: f64, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("resolvent sampler needs n >= 2"));
        }
        let mut s = Self::new_streaming(m, lambda, LAPLACE_NODES)?;
        let d = s.dim;
        let nn = s.nodes.len();
        let mut noise = vec![0.0; n * nn * d];
        noise.par_chunks_mut(nn * d).enumerate().for_each(|(p, path)| {
            let mut rng = path_stream(seed, p as u64);
            let mut xi = vec![0.0; d];
            let mut cur = vec![0.0; d];
            let mut next = vec![0.0; d];
            for (i, st) in s.steps.iter().enumerate() {
                fill_normal(&mut rng, &mut xi[..st.rank]);
                st.apply(&cur, &xi[..st.rank], &mut next);
                std::mem::swap(&mut cur, &mut next);
                path[i * d..(i + 1) * d].copy_from_slice(&cur);
            }
        });
        s.noise = noise;
        s.n = n;
        Ok(s)
    }

    fn means(&self, z: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; self.nodes.len() * d];
        for (i, e) in self.flows.iter().enumerate() {
            for r in 0..d {
                out[i * d + r] = (0..d).map(|c| e[r * d + c] * z[c]).sum();
            }
        }
        out
    }

    fn tail_bound(&self, f: &dyn ScalarField) -> f64 {
        f.sup_norm().map_or(f64::INFINITY, |s| s * self.tail_factor)
    }

    fn path_value(&self, f: &dyn ScalarField, z: &[f64], means: &[f64], noise: &[f64], buf: &mut [f64]) -> Result<f64> {
        let d = self.dim;
        let f0 = f.value(z);
        let mut acc = self.head_weight * f0;
        for (i, w) in self.weights.iter().enumerate() {
            for c in 0..d {
                buf[c] = means[i * d + c] + noise[i * d + c];
            }
            let v = f.value(buf);
            if !v.is_finite() {
                return Err(Error::Evaluation { point: buf.to_vec(), detail: format!("{} is not finite", f.label()) });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Per-sample Laplace integrals at `z` using the stored noise paths.
    pub fn samples(&self, f: &dyn ScalarField, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(invalid("resolvent point has wrong dimension"));
        }
        let means = self.means(z);
        let len = self.nodes.len() * self.dim;
        self.noise
            .par_chunks(len)
            .map(|noise| {
                let mut buf = vec![0.0; self.dim];
                self.path_value(f, z, &means, noise, &mut buf)
            })
            .collect()
    }

    pub fn estimate(&self, f: &dyn ScalarField, z: &[f64]) -> Result<ResolventValue> {
        let e = Estimate::from_samples(&self.samples(f, z)?);
        Ok(ResolventValue { value: e.value, stderr: e.stderr, tail_bound: self.tail_bound(f) })
    }

    pub fn n_samples(&self) -> usize {
        self.n
    }

    fn estimate_streaming(&self, f: &dyn ScalarField, z: &[f64], n: usize, seed: u64) -> Result<ResolventValue> {
        if z.len() != self.dim {
            return Err(invalid("resolvent point has wrong dimension"));
        }
        if n < 2 {
            return Err(invalid("resolvent_apply needs n >= 2"));
        }
        let d = self.dim;
        let means = self.means(z);
        let values: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| {
                let mut rng = path_stream(seed, p as u64);
                let mut xi = vec![0.0; d];
                let mut cur = vec![0.0; d];
                let mut next = vec![0.0; d];
                let mut buf = vec![0.0; d];
                let mut acc = self.head_weight * f.value(z);
                for (i, st) in self.steps.iter().enumerate() {
                    fill_normal(&mut rng, &mut xi[..st.rank]);
                    st.apply(&cur, &xi[..st.rank], &mut next);
                    std::mem::swap(&mut cur, &mut next);
                    for c in 0..d {
                        buf[c] = means[i * d + c] + cur[c];
                    }
                    let v = f.value(&buf);
                    if !v.is_finite() {
                        return Err(Error::Evaluation { point: buf.clone(), detail: format!("{} is not finite", f.label()) });
                    }
                    acc += self.weights[i] * v;
                }
                Ok(acc)
            })
            .collect::<Result<_>>()?;
        let e = Estimate::from_samples(&values);
        Ok(ResolventValue { value: e.value, stderr: e.stderr, tail_bound: self.tail_bound(f) })
    }
}

/// Monte Carlo `‖f‖_p` by importance sampling from `N(0, σ² I)`, `σ = 3`.
pub fn lp_norm_mc(f: &dyn ScalarField, dim: usize, p: f64, n: usize, seed: u64) -> Estimate {
    const SIGMA: f64 = 3.0;
    let log_norm = -(dim as f64) * (SIGMA * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = aux_stream(seed, i as u64);
            let mut y = vec![0.0; dim];
            fill_normal(&mut rng, &mut y);
            y.iter_mut().for_each(|v| *v *= SIGMA);
            let r2: f64 = y.iter().map(|v| v * v).sum();
            let log_density = log_norm - r2 / (2.0 * SIGMA * SIGMA);
            f.value(&y).abs().powf(p) * (-log_density).exp()
        })
        .collect();
    let integral = Estimate::from_samples(&values);
    // delta method for the p-th root
    let value = integral.value.max(0.0).powf(1.0 / p);
    let stderr = if integral.value > 0.0 { value * integral.stderr / (p * integral.value) } else { 0.0 };
    Estimate { value, stderr }
}

#[cfg(test)]
mod tests;
