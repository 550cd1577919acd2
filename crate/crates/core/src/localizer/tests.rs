use std::sync::Arc;

use nalgebra::DMatrix;

use super::*;
use crate::matcore::PsdMatrix;
use crate::models::{builtin_model, uniform_in_ball, BuiltinOptions};
use crate::rng::aux_stream;
use crate::sdesim::{Noise, SdeModel};

fn gamma(_: f64) -> f64 {
    0.1
}

fn sinusoidal() -> SdeModel {
    let noise = Noise::Covariance {
        f: Arc::new(|z, out| {
            let s = 2.0 + z[0].sin();
            out.copy_from_slice(&[s, 0.0, 0.0, s]);
            Ok(())
        }),
        constant: false,
    };
    SdeModel::new("sinusoidal", DMatrix::zeros(2, 2), 2, crate::sdesim::Drift::Zero, noise).unwrap()
}

fn constant() -> SdeModel {
    SdeModel::constant("const", DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), &PsdMatrix::identity(1), None).unwrap()
}

fn points(d: usize, n: usize, radius: f64, tag: u64) -> Vec<Vec<f64>> {
    let mut rng = aux_stream(99, tag);
    (0..n)
        .map(|_| {
            let mut z = vec![0.0; d];
            uniform_in_ball(&mut rng, d, radius, &mut z);
            z
        })
        .collect()
}

#[test]
fn smoothstep_plateaus() {
    assert_eq!(smoothstep(-0.1), 0.0);
    assert_eq!(smoothstep(0.0), 0.0);
    assert_eq!(smoothstep(1.0), 1.0);
    assert!((smoothstep(0.5) - 0.5).abs() < 1e-15);
}

#[test]
fn constant_model_cover() {
    let m = constant();
    let atlas = build_cover(&m, 3.0, &gamma, 32).unwrap();
    assert!(atlas.all_verified());
    assert!(atlas.charts.iter().all(|c| c.radius < 0.5 && c.radius > 0.35 && c.max_oscillation == 0.0));
    assert_eq!(atlas.eta, vec![0.95; 3]);
    let v = verify_cover(&atlas, &m, 2).unwrap();
    assert!(v.passed, "{:?}", v.coverage_witness);
    assert!(verify_cover(&atlas, &m, 1).is_err());
}

#[test]
fn chart_count_depends_on_gamma_only_for_varying_noise() {
    let count = |m: &SdeModel, g: f64| build_cover(m, 2.0, &move |_| g, 16).unwrap().charts.len();
    let c = constant();
    assert_eq!(count(&c, 0.1), count(&c, 1e-6));
    let s = sinusoidal();
    assert!(count(&s, 0.05) > count(&s, 0.5));
}

#[test]
fn sinusoidal_cover_and_counterexamples() {
    let m = sinusoidal();
    let atlas = build_cover(&m, 3.0, &gamma, 32).unwrap();
    assert!(atlas.all_verified());
    assert!(atlas.eta.windows(2).all(|w| w[1] <= w[0]));
    assert!(atlas.charts.iter().all(|c| c.radius < 0.5));
    let v = verify_cover(&atlas, &m, 10).unwrap();
    assert!(v.passed, "{:?}", v.failed_charts());
    assert!(v.charts.iter().all(|c| c.max_oscillation < 0.1 && c.min_eigenvalue >= 1.0 - 1e-12));

    // γ halved below the true oscillation on the busiest chart
    let worst = (0..atlas.charts.len()).max_by(|&a, &b| v.charts[a].max_oscillation.total_cmp(&v.charts[b].max_oscillation)).unwrap();
    let mut halved = atlas.clone();
    halved.charts[worst].gamma = 0.5 * v.charts[worst].max_oscillation;
    let bad = verify_cover(&halved, &m, 2).unwrap();
    assert!(!bad.passed && bad.charts[worst].witness.is_some());

    // one radius inflated 4×
    let j = atlas.charts.iter().position(|c| c.center[0].abs() < 1.0).unwrap();
    let mut inflated = atlas.clone();
    inflated.charts[j].radius *= 4.0;
    let bad = verify_cover(&inflated, &m, 2).unwrap();
    assert!(!bad.charts[j].passed && bad.charts[j].detail.contains("oscillation"));

    // shrinking a radius opens a hole in the cover
    let mut shrunk = atlas.clone();
    for c in shrunk.charts.iter_mut() {
        c.radius *= 0.5;
    }
    let bad = verify_cover(&shrunk, &m, 2).unwrap();
    assert!(bad.coverage_failures > 0 && bad.coverage_witness.is_some());
}

#[test]
fn collapsing_budget_aborts() {
    let err = build_cover(&sinusoidal(), 3.0, &|_| 1e-9, 16).unwrap_err();
    assert!(matches!(err, crate::Error::Hypothesis { .. }), "{err}");
    assert!(err.to_string().contains("floor"));
}

#[test]
fn indefinite_q0_is_rejected() {
    let noise = Noise::Covariance {
        f: Arc::new(|z, out| {
            out[0] = z[0];
            Ok(())
        }),
        constant: false,
    };
    let m = SdeModel::new("bad", DMatrix::zeros(1, 1), 1, crate::sdesim::Drift::Zero, noise).unwrap();
    assert!(matches!(build_cover(&m, 2.0, &gamma, 8), Err(crate::Error::Hypothesis { .. })));
    assert!(matches!(truncate_model(&m, 1), Err(crate::Error::Hypothesis { .. })));
}

#[test]
fn paper_example_cover() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    let atlas = build_cover(&m, 3.0, &gamma, 16).unwrap();
    assert!(atlas.all_verified());
    let v = verify_cover(&atlas, &m, 2).unwrap();
    assert!(v.passed, "{:?}", &v.failed_charts()[..v.failed_charts().len().min(5)]);
}

#[test]
fn localized_model_invariants() {
    let m = sinusoidal();
    let atlas = build_cover(&m, 3.0, &gamma, 32).unwrap();
    let mut q = [0.0; 4];
    let mut qb = [0.0; 4];
    let mut qc = [0.0; 4];
    for j in [0, atlas.charts.len() / 2, atlas.charts.len() - 1] {
        let loc = localize_model(&m, &atlas, j).unwrap();
        let lm = loc.model();
        let c = &atlas.charts[j];
        m.eval_q0(&c.center, &mut qc).unwrap();
        for (i, u) in points(2, 1000, 1.0, j as u64).iter().enumerate() {
            // half the points inside the core, the rest out to 3δ
            let s = if i % 2 == 0 { 1.0 - 1e-9 } else { 3.0 };
            let z: Vec<f64> = c.center.iter().zip(u).map(|(c0, u)| c0 + s * c.radius * u).collect();
            lm.eval_q0(&z, &mut q).unwrap();
            m.eval_q0(&z, &mut qb).unwrap();
            let r = dist(&z, &c.center);
            if r < c.radius * (1.0 - 1e-9) {
                assert_eq!(q, qb);
            } else if r >= 2.0 * c.radius {
                assert_eq!(q, qc);
            } else {
                let rho = loc.bump(&z);
                let (lo, hi) = (qb[0].min(qc[0]), qb[0].max(qc[0]));
                assert!(q[0] >= lo - 1e-15 && q[0] <= hi + 1e-15 && rho > 0.0 && rho < 1.0);
            }
            let (a, _) = eig_range(&q, 2);
            assert!(a >= c.eta);
            let osc = q.iter().zip(&qc).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            assert!(osc < c.gamma);
        }
    }
    let mut unverified = atlas.clone();
    unverified.charts[0].verified = false;
    assert!(matches!(localize_model(&m, &unverified, 0), Err(crate::Error::Precondition(_))));
}

#[test]
fn localized_drift_is_an_indicator() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    let atlas = build_cover(&m, 1.0, &gamma, 8).unwrap();
    let j = atlas.charts.len() / 3;
    let loc = localize_model(&m, &atlas, j).unwrap();
    let c = &atlas.charts[j];
    for u in points(3, 500, 2.5, 7) {
        let z: Vec<f64> = c.center.iter().zip(&u).map(|(c0, u)| c0 + c.radius * u).collect();
        let b = loc.model().b0_vector(&z).unwrap();
        if dist(&z, &c.center) < c.radius {
            assert_eq!(b, m.b0_vector(&z).unwrap());
        } else {
            assert_eq!(b, vec![0.0]);
        }
    }
}

#[test]
fn truncation_family() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    let t2 = truncate_model(&m, 2).unwrap();
    let t3 = truncate_model(&m, 3).unwrap();
    let pts = points(3, 3000, 5.0, 11);
    let sup4 = pts
        .iter()
        .filter(|z| z.iter().map(|x| x * x).sum::<f64>() <= 16.0)
        .map(|z| m.b0_vector(z).unwrap()[0].abs())
        .fold(0.0, f64::max);
    let (mut a, mut b) = ([0.0], [0.0]);
    for z in &pts {
        let r = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        let b2 = t2.b0_vector(z).unwrap()[0];
        assert!(b2.abs() <= sup4 + 1e-12);
        t2.eval_q0(z, &mut a).unwrap();
        if r <= 2.0 {
            m.eval_q0(z, &mut b).unwrap();
            assert_eq!((a, b2), (b, m.b0_vector(z).unwrap()[0]));
            t3.eval_q0(z, &mut b).unwrap();
            assert_eq!((a, b2), (b, t3.b0_vector(z).unwrap()[0]));
        } else if r >= 4.0 {
            assert_eq!((a[0], b2), (1.0, 0.0));
        }
        assert!(a[0] >= truncation_eta(&m, 2).unwrap().min(1.0) - 1e-12);
    }
    assert!(truncate_model(&m, 0).is_err());
}

#[test]
fn atlas_json_round_trip() {
    let atlas = build_cover(&constant(), 1.5, &gamma, 8).unwrap();
    let text = serde_json::to_string(&atlas).unwrap();
    let back: CoverAtlas = serde_json::from_str(&text).unwrap();
    assert_eq!(back, atlas);
}
