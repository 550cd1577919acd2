use std::ops::Range;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ensemble::{Ball, PathEnsemble};
use super::model::SdeModel;
use crate::error::{invalid, Error, Result};
use crate::matcore::{exp_integral, gramian, mat_exp, psd_factor, PsdMatrix};
use crate::rng::{fill_normal, path_stream, Stream};

/// Paths whose state norm exceeds this are frozen and flagged as diverged.
pub const DIVERGENCE_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "name")]
pub enum Scheme {
    Euler,
    ExpEuler,
    /// Coefficients frozen at the scheme state at dyadic times `k/2^level ∧ level`;
    /// each dyadic interval is split into `substeps` exact frozen-OU steps.
    FrozenDyadic { level: u32, substeps: usize },
}

impl Scheme {
    pub fn tag(&self) -> String {
        match self {
            Scheme::Euler => "euler".into(),
            Scheme::ExpEuler => "exp-euler".into(),
            Scheme::FrozenDyadic { level, substeps } => format!("frozen-dyadic(m={level},s={substeps})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scheme: Scheme,
    /// Step size; ignored by the dyadic scheme, whose step is `2^-level / substeps`.
    pub h: f64,
    pub horizon: f64,
    /// Record every `record_every`-th simulation step (the final time is always recorded).
    pub record_every: usize,
    /// Optional stopping domain, checked on the simulation grid.
    pub stop: Option<Ball>,
}

impl SimConfig {
    pub fn new(scheme: Scheme, h: f64, horizon: f64) -> Self {
        Self { scheme, h, horizon, record_every: 1, stop: None }
    }

    pub fn dyadic(level: u32, substeps: usize, horizon: f64) -> Self {
        let h = 0.5f64.powi(level as i32) / substeps.max(1) as f64;
        Self::new(Scheme::FrozenDyadic { level, substeps }, h, horizon)
    }

    pub fn record_every(mut self, stride: usize) -> Self {
        self.record_every = stride;
        self
    }

    pub fn stopped_at(mut self, ball: Ball) -> Self {
        self.stop = Some(ball);
        self
    }

    pub fn step(&self) -> f64 {
        match self.scheme {
            Scheme::FrozenDyadic { level, substeps } => 0.5f64.powi(level as i32) / substeps as f64,
            _ => self.h,
        }
    }

    /// Simulation step sizes: `n_steps` steps of `h`, the last one possibly shorter.
    fn grid(&self) -> Result<(usize, f64, f64)> {
        let h = self.step();
        let t = self.horizon;
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid(format!("step size must be positive, got {h}")));
        }
        if !(t >= h) || !t.is_finite() {
            return Err(invalid(format!("horizon T = {t} must be at least the step h = {h}")));
        }
        if self.record_every == 0 {
            return Err(invalid("record_every must be at least 1"));
        }
        let ratio = t / h;
        let n = if (ratio - ratio.round()).abs() <= 1e-9 * ratio { ratio.round() as usize } else { ratio.ceil() as usize };
        let last = t - (n - 1) as f64 * h;
        Ok((n, h, last))
    }

    fn record_indices(&self, n_steps: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..=n_steps).step_by(self.record_every).collect();
        if *idx.last().unwrap() != n_steps {
            idx.push(n_steps);
        }
        idx
    }
}

/// Precomputed linear maps of one exponential-Euler step of length `h`.
#[derive(Debug, Clone)]
struct ExpStep {
    /// `e^{hA}`, `d × d`.
    phi: Vec<f64>,
    /// First `d₀` columns of `∫₀ʰ e^{sA} ds`, `d × d₀`.
    psi: Vec<f64>,
    /// Factor of the joint covariance of `Y_a = ∫₀ʰ e^{(h-s)A} e_a dW_s`,
    /// `a < d₀`, stacked into `ℝ^{d·d₀}`; `(d·d₀) × rank`.
    joint: Vec<f64>,
    rank: usize,
}

impl ExpStep {
    fn new(a: &DMatrix<f64>, d0: usize, h: f64) -> Result<Self> {
        let d = a.nrows();
        let phi_m = mat_exp(a, h)?;
        let psi_m = exp_integral(a, h)?;
        let big = d * d0;
        let mut a_big = DMatrix::zeros(big, big);
        let mut w = DMatrix::zeros(big, 1);
        for blk in 0..d0 {
            a_big.view_mut((blk * d, blk * d), (d, d)).copy_from(a);
            w[(blk * d + blk, 0)] = 1.0;
        }
        let cov = gramian(&a_big, &PsdMatrix::new(&w * w.transpose())?, h)?;
        let f = psd_factor(&cov)?;
        let rank = f.ncols();
        Ok(Self {
            phi: (0..d * d).map(|k| phi_m[(k / d, k % d)]).collect(),
            psi: (0..d * d0).map(|k| psi_m[(k / d0, k % d0)]).collect(),
            joint: (0..big * rank).map(|k| f[(k / rank, k % rank)]).collect(),
            rank,
        })
    }
}

enum Kernel {
    Euler,
    Exp { full: ExpStep, last: ExpStep },
}

struct Plan<'a> {
    model: &'a SdeModel,
    kernel: Kernel,
    n_steps: usize,
    h: f64,
    h_last: f64,
    /// `Some((steps per dyadic interval, last step index at which to refreeze))`.
    freeze: Option<(usize, usize)>,
    record: Vec<usize>,
    stop: Option<Ball>,
}

struct Scratch {
    b: Vec<f64>,
    bm: Vec<f64>,
    frozen: Vec<f64>,
    xi: Vec<f64>,
    y: Vec<f64>,
    next: Vec<f64>,
}

struct PathMeta {
    exit: Option<f64>,
    diverged: bool,
    peak: f64,
}

impl<'a> Plan<'a> {
    fn new(model: &'a SdeModel, z0: &[f64], cfg: &SimConfig) -> Result<Self> {
        if z0.len() != model.dim() {
            return Err(invalid(format!("z0 has dimension {}, model {}", z0.len(), model.dim())));
        }
        if z0.iter().any(|x| !x.is_finite()) {
            return Err(invalid("z0 must be finite"));
        }
        if let Some(b) = &cfg.stop {
            if b.center.len() != model.dim() {
                return Err(invalid("stopping ball dimension does not match the model"));
            }
        }
        let (n_steps, h, h_last) = cfg.grid()?;
        let d0 = model.d0();
        let mut freeze = None;
        let kernel = match cfg.scheme {
            Scheme::Euler => Kernel::Euler,
            Scheme::ExpEuler | Scheme::FrozenDyadic { .. } => {
                if let Scheme::FrozenDyadic { level, substeps } = cfg.scheme {
                    if level == 0 || substeps == 0 {
                        return Err(invalid("frozen-dyadic needs level >= 1 and substeps >= 1"));
                    }
                    if !model.drift_is_zero() {
                        return Err(Error::Capability(format!(
                            "frozen-dyadic scheme requires b0 = 0 but {} has a drift; use exp-euler",
                            model.label
                        )));
                    }
                    // Refreeze at dyadic points k/2^m up to time m.
                    let cap = (level as usize) << level;
                    freeze = Some((substeps, cap * substeps));
                }
                let full = ExpStep::new(model.a(), d0, h)?;
                let last = if h_last == h { full.clone() } else { ExpStep::new(model.a(), d0, h_last)? };
                Kernel::Exp { full, last }
            }
        };
        Ok(Self { model, kernel, n_steps, h, h_last, freeze, record: cfg.record_indices(n_steps), stop: cfg.stop.clone() })
    }

    fn times(&self) -> Vec<f64> {
        self.record.iter().map(|&i| if i == self.n_steps { (i - 1) as f64 * self.h + self.h_last } else { i as f64 * self.h }).collect()
    }

    fn scratch(&self) -> Scratch {
        let m = self.model;
        let (d, d0, r) = (m.dim(), m.d0(), m.r());
        let rank = match &self.kernel {
            Kernel::Euler => 0,
            Kernel::Exp { full, last } => full.rank.max(last.rank),
        };
        Scratch {
            b: vec![0.0; d0],
            bm: vec![0.0; d0 * r],
            frozen: vec![0.0; d0 * r],
            xi: vec![0.0; r.max(rank)],
            y: vec![0.0; d * d0],
            next: vec![0.0; d],
        }
    }

    /// One step from `z` into `s.next`; `Err` means a coefficient failed.
    #[inline]
    fn step(&self, i: usize, z: &[f64], rng: &mut Stream, s: &mut Scratch) -> std::result::Result<(), String> {
        let m = self.model;
        let (d, d0, r) = (m.dim(), m.d0(), m.r());
        let h = if i + 1 == self.n_steps { self.h_last } else { self.h };
        match &self.kernel {
            Kernel::Euler => {
                m.eval_b0(z, &mut s.b)?;
                m.eval_b0_factor(z, &mut s.bm)?;
                fill_normal(rng, &mut s.xi[..r]);
                let a = m.a_flat();
                let sq = h.sqrt();
                for row in 0..d {
                    let mut drift = 0.0;
                    for c in 0..d {
                        drift += a[row * d + c] * z[c];
                    }
                    let mut noise = 0.0;
                    if row < d0 {
                        drift += s.b[row];
                        for c in 0..r {
                            noise += s.bm[row * r + c] * s.xi[c];
                        }
                    }
                    s.next[row] = z[row] + drift * h + noise * sq;
                }
            }
            Kernel::Exp { full, last } => {
                let st = if i + 1 == self.n_steps { last } else { full };
                let coeffs: &[f64] = match self.freeze {
                    Some((per, cap)) => {
                        if i.is_multiple_of(per) && i <= cap {
                            m.eval_b0_factor(z, &mut s.frozen)?;
                        }
                        &s.frozen
                    }
                    None => {
                        m.eval_b0(z, &mut s.b)?;
                        m.eval_b0_factor(z, &mut s.bm)?;
                        &s.bm
                    }
                };
                for row in 0..d {
                    let mut acc = 0.0;
                    for c in 0..d {
                        acc += st.phi[row * d + c] * z[c];
                    }
                    if self.freeze.is_none() {
                        for a in 0..d0 {
                            acc += st.psi[row * d0 + a] * s.b[a];
                        }
                    }
                    s.next[row] = acc;
                }
                let big = d * d0;
                for c in 0..r {
                    fill_normal(rng, &mut s.xi[..st.rank]);
                    for k in 0..big {
                        let mut acc = 0.0;
                        for j in 0..st.rank {
                            acc += st.joint[k * st.rank + j] * s.xi[j];
                        }
                        s.y[k] = acc;
                    }
                    for a in 0..d0 {
                        let w = coeffs[a * r + c];
                        if w != 0.0 {
                            for row in 0..d {
                                s.next[row] += w * s.y[a * d + row];
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn run_path(&self, z0: &[f64], rng: &mut Stream, out: &mut [f64]) -> PathMeta {
        let d = z0.len();
        let mut s = self.scratch();
        let mut z = z0.to_vec();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut meta = PathMeta { exit: None, diverged: false, peak: norm(&z) };
        let mut halted = false;
        if let Some(b) = &self.stop {
            if !b.contains(&z) {
                meta.exit = Some(0.0);
                halted = true;
            }
        }
        let mut rec = 0;
        if self.record[0] == 0 {
            out[..d].copy_from_slice(&z);
            rec = 1;
        }
        for i in 0..self.n_steps {
            if !halted {
                match self.step(i, &z, rng, &mut s) {
                    Ok(()) => {
                        let nn = norm(&s.next);
                        if nn.is_finite() && nn <= DIVERGENCE_CAP {
                            z.copy_from_slice(&s.next);
                            meta.peak = meta.peak.max(nn);
                            if let Some(b) = &self.stop {
                                if !b.contains(&z) {
                                    meta.exit = Some(if i + 1 == self.n_steps {
                                        i as f64 * self.h + self.h_last
                                    } else {
                                        (i + 1) as f64 * self.h
                                    });
                                    halted = true;
                                }
                            }
                        } else {
                            meta.diverged = true;
                            halted = true;
                        }
                    }
                    Err(_) => {
                        meta.diverged = true;
                        halted = true;
                    }
                }
            }
            if rec < self.record.len() && self.record[rec] == i + 1 {
                out[rec * d..(rec + 1) * d].copy_from_slice(&z);
                rec += 1;
            }
        }
        meta
    }
}

/// Simulate the paths with global indices `paths`; path `p` draws from
/// `path_stream(seed, p)`, so results do not depend on chunking or thread count.
pub fn simulate_range(model: &SdeModel, z0: &[f64], cfg: &SimConfig, paths: Range<u64>, seed: u64) -> Result<PathEnsemble> {
    let plan = Plan::new(model, z0, cfg)?;
    let d = model.dim();
    let times = plan.times();
    let nt = times.len();
    let n = (paths.end.saturating_sub(paths.start)) as usize;
    let mut states = vec![0.0; n * nt * d];
    let metas: Vec<PathMeta> = states
        .par_chunks_mut(nt * d)
        .enumerate()
        .map(|(k, out)| {
            let mut rng = path_stream(seed, paths.start + k as u64);
            plan.run_path(z0, &mut rng, out)
        })
        .collect();
    Ok(PathEnsemble {
        dim: d,
        times,
        states,
        exit_time: metas.iter().map(|m| m.exit).collect(),
        stopped: metas.iter().map(|m| m.exit.is_some()).collect(),
        diverged: metas.iter().map(|m| m.diverged).collect(),
        peak_norm: metas.iter().map(|m| m.peak).collect(),
        seed,
        first_path: paths.start,
        scheme_tag: cfg.scheme.tag(),
        step: cfg.step(),
        z0: z0.to_vec(),
    })
}

pub fn simulate(model: &SdeModel, z0: &[f64], cfg: &SimConfig, n: usize, seed: u64) -> Result<PathEnsemble> {
    simulate_range(model, z0, cfg, 0..n as u64, seed)
}

/// Euler–Maruyama: `Z + (AZ + b)h + B√h ξ`, noise and drift padded to `d` rows.
pub fn euler_maruyama(model: &SdeModel, z0: &[f64], h: f64, horizon: f64, n: usize, seed: u64) -> Result<PathEnsemble> {
    simulate(model, z0, &SimConfig::new(Scheme::Euler, h, horizon), n, seed)
}

/// Exponential Euler: exact OU step with coefficients frozen at the left endpoint.
pub fn exp_euler(model: &SdeModel, z0: &[f64], h: f64, horizon: f64, n: usize, seed: u64) -> Result<PathEnsemble> {
    simulate(model, z0, &SimConfig::new(Scheme::ExpEuler, h, horizon), n, seed)
}

/// Frozen dyadic scheme at `level`, one exact step per dyadic interval.
pub fn frozen_dyadic_scheme(model: &SdeModel, level: u32, z0: &[f64], horizon: f64, n: usize, seed: u64) -> Result<PathEnsemble> {
    simulate(model, z0, &SimConfig::dyadic(level, 1, horizon), n, seed)
}

/// Covariance of one exponential-Euler step from `z`, as implied by the
/// sampler's joint-noise factorisation. Equals `gramian(A, lift(Q₀(z)), h)` in exact arithmetic.
pub fn exp_euler_step_covariance(model: &SdeModel, z: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let (d, d0, r) = (model.dim(), model.d0(), model.r());
    let st = ExpStep::new(model.a(), d0, h)?;
    let mut bm = vec![0.0; d0 * r];
    model.eval_b0_factor(z, &mut bm).map_err(|detail| Error::Evaluation { point: z.to_vec(), detail })?;
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for c in 0..r {
        // noise_c = M_c ξ with M_c = Σ_a B[a][c] J_a (J_a rows a*d..a*d+d of the joint factor)
        let mut mc = DMatrix::<f64>::zeros(d, st.rank);
        for a in 0..d0 {
            for row in 0..d {
                for j in 0..st.rank {
                    mc[(row, j)] += bm[a * r + c] * st.joint[(a * d + row) * st.rank + j];
                }
            }
        }
        cov += &mc * mc.transpose();
    }
    Ok(cov)
}

/// Euler–Maruyama on the step hierarchy `h·2^ℓ`, `ℓ = 0..levels`, driven by
/// one Brownian path: coarse increments are sums of fine ones. Level 0 is the finest.
pub fn euler_coupled(
    model: &SdeModel,
    z0: &[f64],
    h: f64,
    levels: usize,
    horizon: f64,
    paths: Range<u64>,
    seed: u64,
) -> Result<Vec<PathEnsemble>> {
    if levels == 0 {
        return Err(invalid("coupled simulation needs at least one level"));
    }
    let coarsest = h * (1usize << (levels - 1)) as f64;
    let cfg = SimConfig::new(Scheme::Euler, coarsest, horizon);
    let (n_coarse, _, last) = cfg.grid()?;
    if last != coarsest {
        return Err(invalid("coupled simulation needs the horizon to be a multiple of the coarsest step"));
    }
    if z0.len() != model.dim() {
        return Err(invalid("z0 dimension does not match the model"));
    }
    let (d, d0, r) = (model.dim(), model.d0(), model.r());
    let n = (paths.end - paths.start) as usize;
    let n_fine = n_coarse << (levels - 1);
    let a = model.a_flat();
    let per_path: Vec<Vec<Vec<f64>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut rng = path_stream(seed, paths.start + k as u64);
            let mut out: Vec<Vec<f64>> = (0..levels).map(|l| Vec::with_capacity(((n_fine >> l) + 1) * d)).collect();
            let mut zs: Vec<Vec<f64>> = vec![z0.to_vec(); levels];
            let mut acc: Vec<Vec<f64>> = vec![vec![0.0; r]; levels];
            let mut dead = vec![false; levels];
            for l in 0..levels {
                out[l].extend_from_slice(z0);
            }
            let mut b = vec![0.0; d0];
            let mut bm = vec![0.0; d0 * r];
            let mut xi = vec![0.0; r];
            let mut next = vec![0.0; d];
            for i in 0..n_fine {
                fill_normal(&mut rng, &mut xi);
                for l in 0..levels {
                    for c in 0..r {
                        acc[l][c] += xi[c];
                    }
                    let span = 1usize << l;
                    if (i + 1) % span != 0 {
                        continue;
                    }
                    let hl = h * span as f64;
                    let z = &zs[l];
                    if !dead[l] && model.eval_b0(z, &mut b).is_ok() && model.eval_b0_factor(z, &mut bm).is_ok() {
                        // acc holds √h Σ ξ scaled later: ΔW = √h · Σ ξ_fine
                        let sq = h.sqrt();
                        for row in 0..d {
                            let mut drift = 0.0;
                            for c in 0..d {
                                drift += a[row * d + c] * z[c];
                            }
                            let mut noise = 0.0;
                            if row < d0 {
                                drift += b[row];
                                for c in 0..r {
                                    noise += bm[row * r + c] * acc[l][c];
                                }
                            }
                            next[row] = z[row] + drift * hl + noise * sq;
                        }
                        let nn = next.iter().map(|x| x * x).sum::<f64>().sqrt();
                        if nn.is_finite() && nn <= DIVERGENCE_CAP {
                            zs[l].copy_from_slice(&next);
                        } else {
                            dead[l] = true;
                        }
                    } else {
                        dead[l] = true;
                    }
                    acc[l].fill(0.0);
                    let zl = zs[l].clone();
                    out[l].extend_from_slice(&zl);
                }
            }
            out.push(dead.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect());
            out
        })
        .collect();
    let mut res = Vec::with_capacity(levels);
    for l in 0..levels {
        let steps = n_fine >> l;
        let hl = h * (1usize << l) as f64;
        let times: Vec<f64> = (0..=steps).map(|i| i as f64 * hl).collect();
        let mut states = Vec::with_capacity(n * (steps + 1) * d);
        for p in &per_path {
            states.extend_from_slice(&p[l]);
        }
        let diverged: Vec<bool> = per_path.iter().map(|p| p[levels][l] != 0.0).collect();
        let peak_norm = per_path
            .iter()
            .map(|p| p[l].chunks(d).map(|z| z.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max))
            .collect();
        res.push(PathEnsemble {
            dim: d,
            times,
            states,
            exit_time: vec![None; n],
            stopped: vec![false; n],
            diverged,
            peak_norm,
            seed,
            first_path: paths.start,
            scheme_tag: format!("euler-coupled(level={l})"),
            step: hl,
            z0: z0.to_vec(),
        });
    }
    Ok(res)
}
