use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{dist, eig_range};
use crate::error::{invalid, Error, Result};
use crate::models::uniform_in_ball;
use crate::rng::{aux_stream, fill_normal};
use crate::sdesim::SdeModel;

/// Factor applied to the sampled ellipticity of each annulus.
pub const ETA_SAFETY: f64 = 0.95;
/// Construction aborts when a chart would need a radius below this.
pub const RADIUS_FLOOR: f64 = 1e-4;
const MAX_RADIUS: f64 = 0.5;
/// Slack so that box corners lie strictly inside the chart ball.
const CORNER_SLACK: f64 = 1e-9;
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub center: Vec<f64>,
    pub radius: f64,
    pub eta: f64,
    pub gamma: f64,
    pub annulus: usize,
    /// Bisection path of the leaf box from the root box ('0' lower half, '1' upper).
    pub cell: String,
    /// Sampled `max ‖Q₀(z) − Q₀(z_j)‖_HS` on `B(z_j, 2δ_j)` during construction.
    pub max_oscillation: f64,
    pub verified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverAtlas {
    pub model: String,
    pub region_radius: f64,
    pub dim: usize,
    pub root_lo: Vec<f64>,
    pub root_side: f64,
    pub probe_density: usize,
    /// Ellipticity bound per annulus `k = 1..=⌈R⌉` (index `k - 1`), non-increasing.
    pub eta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub charts: Vec<Chart>,
}

impl CoverAtlas {
    pub fn all_verified(&self) -> bool {
        self.charts.iter().all(|c| c.verified)
    }

    pub fn min_radius(&self) -> f64 {
        self.charts.iter().map(|c| c.radius).fold(f64::INFINITY, f64::min)
    }

    /// Box of a chart, recomputed from its bisection path.
    pub fn cell_box(&self, chart: usize) -> (Vec<f64>, Vec<f64>) {
        let mut lo = self.root_lo.clone();
        let mut hi: Vec<f64> = lo.iter().map(|x| x + self.root_side).collect();
        for ch in self.charts[chart].cell.chars() {
            let (ax, mid) = split_plane(&lo, &hi);
            if ch == '0' {
                hi[ax] = mid;
            } else {
                lo[ax] = mid;
            }
        }
        (lo, hi)
    }

    /// Chart whose box contains `z`, if any.
    pub fn locate(&self, index: &HashMap<&str, usize>, z: &[f64]) -> Option<usize> {
        let mut lo = self.root_lo.clone();
        let mut hi: Vec<f64> = lo.iter().map(|x| x + self.root_side).collect();
        if z.iter().zip(lo.iter().zip(&hi)).any(|(x, (l, h))| x < l || x > h) {
            return None;
        }
        let mut path = String::new();
        for _ in 0..MAX_DEPTH {
            if let Some(&j) = index.get(path.as_str()) {
                return Some(j);
            }
            let (ax, mid) = split_plane(&lo, &hi);
            if z[ax] < mid {
                hi[ax] = mid;
                path.push('0');
            } else {
                lo[ax] = mid;
                path.push('1');
            }
        }
        None
    }

    pub fn cell_index(&self) -> HashMap<&str, usize> {
        self.charts.iter().enumerate().map(|(j, c)| (c.cell.as_str(), j)).collect()
    }
}

/// Longest axis (lowest index on ties) and its midpoint.
fn split_plane(lo: &[f64], hi: &[f64]) -> (usize, f64) {
    let mut ax = 0;
    for i in 1..lo.len() {
        if hi[i] - lo[i] > hi[ax] - lo[ax] {
            ax = i;
        }
    }
    (ax, 0.5 * (lo[ax] + hi[ax]))
}

fn box_distance_to_origin(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter().zip(hi).map(|(&l, &h)| if l > 0.0 { l * l } else if h < 0.0 { h * h } else { 0.0 }).sum::<f64>().sqrt()
}

fn annulus_of(z: &[f64], k_max: usize) -> usize {
    let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
    (r.ceil() as usize).clamp(1, k_max)
}

/// Evaluates `Q₀` into reusable buffers and compares against a reference.
struct Probe<'a> {
    m: &'a SdeModel,
    d0: usize,
    q: Vec<f64>,
}

impl<'a> Probe<'a> {
    fn new(m: &'a SdeModel) -> Self {
        let d0 = m.d0();
        Self { m, d0, q: vec![0.0; d0 * d0] }
    }

    fn eval(&mut self, z: &[f64]) -> Result<&[f64]> {
        self.m.eval_q0(z, &mut self.q).map_err(|detail| Error::Evaluation { point: z.to_vec(), detail })?;
        if self.q.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { point: z.to_vec(), detail: "Q0 not finite".into() });
        }
        Ok(&self.q)
    }

    fn eig(&mut self, z: &[f64]) -> Result<(f64, f64)> {
        let d0 = self.d0;
        let q = self.eval(z)?;
        Ok(eig_range(q, d0))
    }

    fn oscillation(&mut self, z: &[f64], reference: &[f64]) -> Result<f64> {
        let q = self.eval(z)?;
        Ok(q.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }
}

/// Per-annulus ellipticity bounds from samples of the radial band `[k - 1, k + 1]`
/// (the outermost band is widened to the reach of the boundary charts).
fn annulus_etas(m: &SdeModel, radius: f64, k_max: usize, samples: usize) -> Result<Vec<f64>> {
    let d = m.dim();
    let mut probe = Probe::new(m);
    let mut rng = aux_stream(0x10ca1, 1);
    let mut z = vec![0.0; d];
    let mut etas = Vec::with_capacity(k_max);
    let mut prev = f64::INFINITY;
    for k in 1..=k_max {
        let r0 = (k - 1) as f64;
        let r1 = if k == k_max { radius.max(k as f64) + 1.5 } else { (k + 1) as f64 };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..samples {
            fill_normal(&mut rng, &mut z);
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            let u: f64 = rng.random();
            let df = d as f64;
            let r = (r0.powf(df) + u * (r1.powf(df) - r0.powf(df))).powf(1.0 / df);
            z.iter_mut().for_each(|x| *x *= r / n);
            let (a, b) = probe.eig(&z)?;
            if !(a > 0.0) {
                return Err(Error::Hypothesis {
                    witness: z.clone(),
                    detail: format!("Q0 not positive definite (min eigenvalue {a:e})"),
                });
            }
            lo = lo.min(a);
            hi = hi.max(b);
        }
        let eta = (ETA_SAFETY * lo.min(1.0 / hi)).min(prev);
        etas.push(eta);
        prev = eta;
    }
    Ok(etas)
}

/// Fixed probe cloud in the unit ball: the centre, the `±e_i` and random points.
fn unit_cloud(d: usize, n: usize) -> Vec<Vec<f64>> {
    let mut cloud = Vec::with_capacity(n + 2 * d);
    for i in 0..d {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; d];
            e[i] = s;
            cloud.push(e);
        }
    }
    let mut rng = aux_stream(0x10ca1, 2);
    let mut z = vec![0.0; d];
    for _ in 0..n {
        uniform_in_ball(&mut rng, d, 1.0, &mut z);
        cloud.push(z.clone());
    }
    cloud
}

/// Build a cover of `B̄(0, R)`; `gamma_rule` maps an annulus ellipticity bound
/// to the oscillation budget of its charts, and `probe_density` is the number
/// of random probes per chart ball.
pub fn build_cover(m: &SdeModel, radius: f64, gamma_rule: &dyn Fn(f64) -> f64, probe_density: usize) -> Result<CoverAtlas> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(invalid(format!("region radius must be positive, got {radius}")));
    }
    if probe_density == 0 {
        return Err(invalid("probe_density must be positive"));
    }
    let d = m.dim();
    let d0 = m.d0();
    let k_max = radius.ceil() as usize;
    let etas = annulus_etas(m, radius, k_max, (20 * probe_density).max(2000))?;
    let gammas: Vec<f64> = etas.iter().map(|&e| gamma_rule(e)).collect();
    if let Some(g) = gammas.iter().find(|g| !(**g > 0.0)) {
        return Err(invalid(format!("gamma rule must be positive, got {g}")));
    }

    let base_side = (1.0 - 1e-3) / (d as f64).sqrt();
    let mut root_side = base_side;
    while root_side < 2.0 * radius {
        root_side *= 2.0;
    }
    let root_lo = vec![-0.5 * root_side; d];
    let cloud = unit_cloud(d, probe_density);
    let mut probe = Probe::new(m);
    let mut qc = vec![0.0; d0 * d0];
    let mut charts = Vec::new();
    let mut p = vec![0.0; d];

    // Depth-first so that a collapsing radius aborts early.
    let mut stack = vec![(root_lo.clone(), root_lo.iter().map(|x| x + root_side).collect::<Vec<f64>>(), String::new())];
    while let Some((lo, hi, path)) = stack.pop() {
        if box_distance_to_origin(&lo, &hi) > radius {
            continue;
        }
        let center: Vec<f64> = lo.iter().zip(&hi).map(|(l, h)| 0.5 * (l + h)).collect();
        let half = 0.5 * dist(&lo, &hi);
        let delta = half * (1.0 + CORNER_SLACK);
        let split = if delta >= MAX_RADIUS {
            true
        } else {
            if delta < RADIUS_FLOOR {
                return Err(Error::Hypothesis {
                    witness: center,
                    detail: format!(
                        "chart radius fell below the floor {RADIUS_FLOOR:e}; the oscillation budget cannot be met"
                    ),
                });
            }
            let k = annulus_of(&center, k_max);
            qc.copy_from_slice(probe.eval(&center)?);
            let mut osc = 0.0f64;
            for u in &cloud {
                p.iter_mut().zip(&center).zip(u).for_each(|((p, c), u)| *p = c + 2.0 * delta * u);
                osc = osc.max(probe.oscillation(&p, &qc)?);
                if osc >= gammas[k - 1] {
                    break;
                }
            }
            if osc < gammas[k - 1] {
                let eta = etas[k - 1];
                let mut ok = true;
                for u in &cloud {
                    p.iter_mut().zip(&center).zip(u).for_each(|((p, c), u)| *p = c + 2.0 * delta * u);
                    let (a, b) = probe.eig(&p)?;
                    if a < eta || b > 1.0 / eta {
                        ok = false;
                        break;
                    }
                }
                charts.push(Chart {
                    center,
                    radius: delta,
                    eta,
                    gamma: gammas[k - 1],
                    annulus: k,
                    cell: path.clone(),
                    max_oscillation: osc,
                    verified: ok,
                });
                false
            } else {
                true
            }
        };
        if split {
            let (ax, mid) = split_plane(&lo, &hi);
            let (mut lo1, mut hi0) = (lo.clone(), hi.clone());
            hi0[ax] = mid;
            lo1[ax] = mid;
            stack.push((lo1, hi, format!("{path}1")));
            stack.push((lo, hi0, format!("{path}0")));
        }
    }
    Ok(CoverAtlas {
        model: m.label.clone(),
        region_radius: radius,
        dim: d,
        root_lo,
        root_side,
        probe_density,
        eta: etas,
        gamma: gammas,
        charts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartVerdict {
    pub index: usize,
    pub passed: bool,
    pub grid_spacing: f64,
    pub grid_points: usize,
    pub max_oscillation: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// The chart's box lies inside its open ball.
    pub covers_cell: bool,
    pub witness: Option<Vec<f64>>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverVerdict {
    pub oversample: usize,
    pub charts: Vec<ChartVerdict>,
    pub coverage_points: usize,
    pub coverage_failures: usize,
    pub coverage_witness: Option<Vec<f64>>,
    pub passed: bool,
}

impl CoverVerdict {
    pub fn failed_charts(&self) -> Vec<usize> {
        self.charts.iter().filter(|c| !c.passed).map(|c| c.index).collect()
    }
}

fn check_chart(atlas: &CoverAtlas, m: &SdeModel, j: usize, oversample: usize) -> ChartVerdict {
    let c = &atlas.charts[j];
    let d = atlas.dim;
    let h = c.radius / oversample as f64;
    let n = 2 * oversample as i64;
    let mut v = ChartVerdict {
        index: j,
        passed: true,
        grid_spacing: h,
        grid_points: 0,
        max_oscillation: 0.0,
        min_eigenvalue: f64::INFINITY,
        max_eigenvalue: f64::NEG_INFINITY,
        covers_cell: true,
        witness: None,
        detail: String::new(),
    };
    fn fail(v: &mut ChartVerdict, z: &[f64], msg: String) {
        if v.passed {
            v.passed = false;
            v.witness = Some(z.to_vec());
            v.detail = msg;
        }
    }

    let (lo, hi) = atlas.cell_box(j);
    let mut corner = vec![0.0; d];
    for mask in 0..(1usize << d) {
        for i in 0..d {
            corner[i] = if mask >> i & 1 == 1 { hi[i] } else { lo[i] };
        }
        if dist(&corner, &c.center) >= c.radius {
            v.covers_cell = false;
            fail(&mut v, &corner, "cell corner outside the chart ball".into());
            break;
        }
    }

    let mut probe = Probe::new(m);
    let qc = match probe.eval(&c.center) {
        Ok(q) => q.to_vec(),
        Err(e) => {
            fail(&mut v, &c.center, e.to_string());
            return v;
        }
    };
    let qc_dim = m.d0();
    let mut idx = vec![-n; d];
    let mut z = vec![0.0; d];
    'grid: loop {
        let r2: i64 = idx.iter().map(|i| i * i).sum();
        if r2 <= n * n {
            for i in 0..d {
                z[i] = c.center[i] + h * idx[i] as f64;
            }
            v.grid_points += 1;
            match probe.eval(&z) {
                Err(e) => fail(&mut v, &z, e.to_string()),
                Ok(q) => {
                    let (a, b) = eig_range(q, qc_dim);
                    let osc = q.iter().zip(&qc).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                    v.min_eigenvalue = v.min_eigenvalue.min(a);
                    v.max_eigenvalue = v.max_eigenvalue.max(b);
                    if a < c.eta || b > 1.0 / c.eta {
                        fail(&mut v, &z, format!("eigenvalues [{a}, {b}] outside [{}, {}]", c.eta, 1.0 / c.eta));
                    }
                    v.max_oscillation = v.max_oscillation.max(osc);
                    if !(osc < c.gamma) {
                        fail(&mut v, &z, format!("oscillation {osc} >= gamma {}", c.gamma));
                    }
                }
            }
        }
        for i in 0..d {
            idx[i] += 1;
            if idx[i] <= n {
                continue 'grid;
            }
            idx[i] = -n;
        }
        break;
    }
    v
}

/// Re-check every chart on a grid of spacing `δ_j / oversample` over
/// `B(z_j, 2δ_j)`, and the covering on random points of `B̄(0, R)` and its
/// boundary sphere.
pub fn verify_cover(atlas: &CoverAtlas, m: &SdeModel, oversample: usize) -> Result<CoverVerdict> {
    if oversample < 2 {
        return Err(invalid(format!("oversample factor must be at least 2, got {oversample}")));
    }
    if m.dim() != atlas.dim {
        return Err(invalid("model dimension does not match the atlas"));
    }
    let charts: Vec<ChartVerdict> =
        (0..atlas.charts.len()).into_par_iter().map(|j| check_chart(atlas, m, j, oversample)).collect();

    let d = atlas.dim;
    let index = atlas.cell_index();
    let n_cov = 5000 * oversample;
    let mut rng = aux_stream(0x10ca1, 3);
    let mut z = vec![0.0; d];
    let mut failures = 0;
    let mut witness = None;
    for i in 0..n_cov {
        if i % 5 == 0 {
            // boundary sphere
            fill_normal(&mut rng, &mut z);
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            z.iter_mut().for_each(|x| *x *= atlas.region_radius / n);
        } else {
            uniform_in_ball(&mut rng, d, atlas.region_radius, &mut z);
        }
        let covered = atlas.locate(&index, &z).is_some_and(|j| dist(&z, &atlas.charts[j].center) < atlas.charts[j].radius);
        if !covered {
            failures += 1;
            witness.get_or_insert_with(|| z.clone());
        }
    }
    let passed = failures == 0 && charts.iter().all(|c| c.passed);
    Ok(CoverVerdict { oversample, charts, coverage_points: n_cov, coverage_failures: failures, coverage_witness: witness, passed })
}
