use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matcore::{hs_norm, KalmanReport};
use crate::rng::{aux_stream, fill_normal, Stream};
use crate::sdesim::SdeModel;
use rand::Rng;

/// Pairs of probes used for the oscillation table.
const OSC_PROBES: usize = 300;
const DIST_EDGES: [f64; 6] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub witness: Vec<f64>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OscillationRow {
    /// Pair distance range `[lo, hi)`; `hi` is `null` for the open last bin.
    pub lo: f64,
    pub hi: Option<f64>,
    pub pairs: usize,
    /// Largest `‖Q₀(z) − Q₀(z')‖_HS` among the pairs in the bin.
    pub max_oscillation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LyapunovCheck {
    pub declared_c: f64,
    pub provenance: String,
    pub sampled_max: f64,
    pub argmax: Vec<f64>,
}

/// Sampled rendering of the model hypotheses. It never asserts continuity
/// or a global bound; it lists what was seen on the probes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub model: String,
    pub region_radius: f64,
    pub n_probes: usize,
    pub seed: u64,
    pub kalman: KalmanReport,
    /// Minimum eigenvalue of `Q₀` at each probe, in probe order.
    pub ellipticity_witness: Vec<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub continuity_modulus: Vec<OscillationRow>,
    /// Sampled `sup |b₀|` over the probes (local boundedness is reported, not proved).
    pub drift_sup: f64,
    pub lyapunov_check: Option<LyapunovCheck>,
    pub violations: Vec<Violation>,
    pub summary: String,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Uniform point in the ball `B(0, radius)` of dimension `d`.
pub(crate) fn uniform_in_ball(rng: &mut Stream, d: usize, radius: f64, out: &mut [f64]) {
    loop {
        fill_normal(rng, out);
        let n = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.0 {
            let u: f64 = rng.random();
            let r = radius * u.powf(1.0 / d as f64);
            out.iter_mut().for_each(|x| *x *= r / n);
            return;
        }
    }
}

fn min_max_eig(m: &DMatrix<f64>) -> (f64, f64) {
    let e = m.clone().symmetric_eigen().eigenvalues;
    (e.min(), e.max())
}

pub fn validate(model: &SdeModel, radius: f64, n_probes: usize, seed: u64) -> Result<HypothesisReport> {
    if !(radius > 0.0) {
        return Err(invalid(format!("region radius must be positive, got {radius}")));
    }
    if n_probes < 100 {
        return Err(invalid(format!("validate needs at least 100 probes, got {n_probes}")));
    }
    let d = model.dim();
    let mut rng = aux_stream(seed, 0x7a11);
    let mut probes: Vec<Vec<f64>> = vec![vec![0.0; d]];
    let mut buf = vec![0.0; d];
    while probes.len() < n_probes {
        uniform_in_ball(&mut rng, d, radius, &mut buf);
        probes.push(buf.clone());
    }

    let mut violations = Vec::new();
    let kalman = model.kalman().clone();
    if kalman.k.is_none() {
        violations.push(Violation {
            kind: "kalman".into(),
            witness: vec![],
            detail: format!("rank sequence {:?} never reaches {d}", kalman.rank_sequence),
        });
    }

    let mut q0s = Vec::with_capacity(n_probes);
    let mut mins = Vec::with_capacity(n_probes);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut drift_sup = 0.0f64;
    for z in &probes {
        let q = model.q0_matrix(z)?;
        let (a, b) = min_max_eig(&q);
        if !(a > 0.0) && violations.iter().filter(|v| v.kind == "ellipticity").count() < 5 {
            violations.push(Violation {
                kind: "ellipticity".into(),
                witness: z.clone(),
                detail: format!("Q0 has minimum eigenvalue {a:e}"),
            });
        }
        lo = lo.min(a);
        hi = hi.max(b);
        mins.push(a);
        q0s.push(q);
        let b0 = model.b0_vector(z)?;
        if b0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { point: z.clone(), detail: "b0 not finite".into() });
        }
        drift_sup = drift_sup.max(b0.iter().map(|x| x * x).sum::<f64>().sqrt());
    }

    let mut rows: Vec<OscillationRow> = DIST_EDGES
        .iter()
        .enumerate()
        .map(|(i, &lo)| OscillationRow { lo, hi: DIST_EDGES.get(i + 1).copied(), pairs: 0, max_oscillation: 0.0 })
        .collect();
    let m = probes.len().min(OSC_PROBES);
    for i in 0..m {
        for j in 0..i {
            let dist = probes[i].iter().zip(&probes[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let bin = DIST_EDGES.iter().rposition(|&e| dist >= e).unwrap_or(0);
            let osc = hs_norm(&(&q0s[i] - &q0s[j]));
            rows[bin].pairs += 1;
            rows[bin].max_oscillation = rows[bin].max_oscillation.max(osc);
        }
    }

    let lyapunov_check = match &model.lyapunov {
        None => None,
        Some(ly) => {
            let mut best = f64::NEG_INFINITY;
            let mut arg = probes[0].clone();
            for z in &probes {
                let phi = ly.phi.value(z);
                if !(phi > 0.0) {
                    violations.push(Violation { kind: "lyapunov".into(), witness: z.clone(), detail: format!("phi = {phi} is not positive") });
                    break;
                }
                let ratio = model.generator(&*ly.phi, z)? / phi;
                if ratio > best {
                    best = ratio;
                    arg = z.clone();
                }
            }
            if best > ly.c {
                violations.push(Violation {
                    kind: "lyapunov".into(),
                    witness: arg.clone(),
                    detail: format!("sampled max of L phi / phi is {best} > declared C = {}", ly.c),
                });
            }
            Some(LyapunovCheck { declared_c: ly.c, provenance: ly.provenance.clone(), sampled_max: best, argmax: arg })
        }
    };

    let summary = if violations.is_empty() {
        format!("no violation found on {n_probes} samples in B(0, {radius}); continuity is not asserted")
    } else {
        format!("{} violation(s) found on {n_probes} samples in B(0, {radius})", violations.len())
    };
    Ok(HypothesisReport {
        model: model.label.clone(),
        region_radius: radius,
        n_probes,
        seed,
        kalman,
        ellipticity_witness: mins,
        min_eigenvalue: lo,
        max_eigenvalue: hi,
        continuity_modulus: rows,
        drift_sup,
        lyapunov_check,
        violations,
        summary,
    })
}
