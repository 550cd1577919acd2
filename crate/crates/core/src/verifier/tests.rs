use std::sync::Arc;

use nalgebra::DMatrix;

use super::*;
use crate::field::{Constant, FieldRef, GaussianBump, Linear, Scaled, ScalarField};
use crate::matcore::PsdMatrix;
use crate::oukernel::OUModel;
use crate::sdesim::{exp_euler, SdeModel, SimConfig, Scheme, simulate};

fn kolmogorov() -> SdeModel {
    SdeModel::constant("kolmogorov-2d", DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), &PsdMatrix::identity(1), None).unwrap()
}

fn kolmogorov_ou() -> OUModel {
    OUModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), PsdMatrix::identity(1)).unwrap()
}

/// Mean-reverting OU with full-rank noise so that paths stay in the battery's range.
fn damped() -> SdeModel {
    SdeModel::constant("damped", DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 1.0, -1.0]), &PsdMatrix::identity(1), None).unwrap()
}

#[test]
fn default_battery_is_versioned_and_complete() {
    let b = FunctionBattery::default_for(3);
    assert_eq!(b.version, BATTERY_VERSION);
    assert_eq!(b.labels(), ["gauss-0", "gauss-1", "gauss-2", "bump-a", "bump-b", "trig"]);
    let z = [0.3, -0.8, 1.1];
    for f in b.members() {
        assert!(f.sup_norm().unwrap() > 0.0 && f.has_hessian());
        assert!(crate::field::tests::gradient_mismatch(f.as_ref(), &z) < 1e-6, "{}", f.label());
    }
    let sub = b.select(&["trig".into(), "gauss-0".into()]).unwrap();
    assert_eq!(sub.labels(), ["trig", "gauss-0"]);
    assert!(matches!(b.select(&["nope".into()]), Err(crate::Error::Lookup { .. })));
    assert_eq!(FunctionBattery::default_for(2).len(), 6);
}

#[test]
fn resolvent_of_one_is_exact_per_path() {
    let ens = exp_euler(&kolmogorov(), &[0.5, 0.0], 1.0 / 32.0, 1.5, 50, 3).unwrap();
    for lambda in [0.5, 2.0, 8.0] {
        let e = resolvent_functional(&ens, &Constant::new(1.0), lambda).unwrap();
        assert!((e.value - (1.0 - (-lambda * 1.5f64).exp()) / lambda).abs() < 1e-14);
        assert_eq!(e.stderr, 0.0);
        assert!(e.respects_maximum_principle(1.0));
    }
    assert!(resolvent_functional(&ens, &Constant::new(1.0), 0.0).is_err());
    assert!(resolvent_functional(&ens, &Constant::new(1.0), -1.0).is_err());
}

#[test]
fn resolvent_matches_exact_ou_kernel() {
    let f = GaussianBump::new("g", vec![0.0, 0.0], 1.5, 1.0);
    let z = [0.5, -0.5];
    let ens = exp_euler(&kolmogorov(), &z, 1.0 / 64.0, 3.0, 4000, 8).unwrap();
    let ou = kolmogorov_ou();
    for lambda in [2.0, 4.0] {
        let a = resolvent_functional(&ens, &f, lambda).unwrap();
        let b = ou.resolvent_apply(&f, lambda, &z, 4000, 9).unwrap();
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.value - b.value).abs() <= 4.0 * se + a.tail_bound + b.tail_bound, "{a:?} {b:?}");
        let doubled = resolvent_functional(&ens, &f, 2.0 * lambda).unwrap();
        assert!(doubled.value < a.value);
    }
}

#[test]
fn chunked_accumulation_equals_single_pass() {
    let m = damped();
    let cfg = SimConfig::new(Scheme::Euler, 1.0 / 16.0, 1.0);
    let b = FunctionBattery::default_for(2);
    let grid = DEFAULT_LAMBDA_GRID;
    let chunked = simulate_battery(&m, &[0.2, 0.1], &cfg, 300, 4, 70, &b, &grid).unwrap();
    let whole = battery_estimates(&simulate(&m, &[0.2, 0.1], &cfg, 300, 4).unwrap(), &b, &grid).unwrap();
    assert_eq!(chunked, whole);
    assert_eq!(chunked.len(), 18);
    for e in &chunked {
        let sup = b.get(&e.f_id).unwrap().sup_norm().unwrap();
        assert!(e.respects_maximum_principle(sup));
    }
}

#[test]
fn law_comparison_null_and_alternative() {
    let m = damped();
    let z = [0.5, 0.5];
    let b = FunctionBattery::default_for(2);
    let a = exp_euler(&m, &z, 1.0 / 32.0, 2.0, 3000, 1).unwrap();
    let a2 = exp_euler(&m, &z, 1.0 / 32.0, 2.0, 3000, 2).unwrap();
    let cmp = compare_laws(&a, &a2, &b, &DEFAULT_LAMBDA_GRID).unwrap();
    assert!(cmp.passed, "max |z| = {}", cmp.max_abs_z);
    assert!(cmp.caveat.is_none());
    let csv = cmp.to_csv();
    assert!(csv.starts_with(CSV_HEADER));
    assert_eq!(csv.lines().count(), 19);

    let shifted = m.with_drift_shift(vec![0.5]).unwrap();
    let c = exp_euler(&shifted, &z, 1.0 / 32.0, 2.0, 3000, 3).unwrap();
    let cmp = compare_laws(&a, &c, &b, &DEFAULT_LAMBDA_GRID).unwrap();
    assert!(!cmp.passed && cmp.max_abs_z > 4.0);
    assert!(cmp.to_csv().contains(",fail"));

    let other = exp_euler(&m, &[0.0, 0.0], 1.0 / 32.0, 2.0, 10, 5).unwrap();
    assert!(compare_laws(&a, &other, &b, &DEFAULT_LAMBDA_GRID).is_err());
    assert!(compare_laws(&a, &a, &b, &DEFAULT_LAMBDA_GRID).is_err());
    let shorter = exp_euler(&m, &z, 1.0 / 32.0, 1.0, 10, 5).unwrap();
    assert!(compare_laws(&a, &shorter, &b, &DEFAULT_LAMBDA_GRID).is_err());
}

#[test]
fn martingale_defect_of_constant_is_zero() {
    let m = kolmogorov();
    let ens = exp_euler(&m, &[0.0, 0.0], 1.0 / 16.0, 1.0, 40, 1).unwrap();
    let d = martingale_defect(&ens, &Constant::new(1.0), &m, &[(0.0, 0.5), (0.5, 1.0)], &[]).unwrap();
    for e in d {
        assert_eq!((e.value, e.stderr), (0.0, 0.0));
    }
}

#[test]
fn martingale_defect_exact_ou() {
    let m = kolmogorov();
    let ens = exp_euler(&m, &[0.3, -0.2], 1.0 / 64.0, 1.0, 6000, 12).unwrap();
    let b = FunctionBattery::default_for(2);
    let marks = [WindowMark { time: 0.25, f: Arc::new(GaussianBump::new("h", vec![0.0, 0.0], 2.0, 1.0)) as FieldRef }];
    for f in b.members() {
        let d = martingale_defect(&ens, f.as_ref(), &m, &[(0.25, 0.5), (0.5, 1.0)], &marks).unwrap();
        for e in d {
            assert!(e.within_bounds(), "{e:?}");
        }
    }
    assert!(martingale_defect(&ens, b.members()[0].as_ref(), &m, &[(0.1, 0.3)], &marks).is_err());
    let early = [WindowMark { time: 0.75, f: marks[0].f.clone() }];
    assert!(martingale_defect(&ens, b.members()[0].as_ref(), &m, &[(0.25, 0.5)], &early).is_err());
}

struct ValueOnly;
impl ScalarField for ValueOnly {
    fn label(&self) -> &str {
        "value-only"
    }
    fn value(&self, _z: &[f64]) -> f64 {
        0.0
    }
}

#[test]
fn missing_hessian_is_a_capability_error() {
    let m = kolmogorov();
    let ens = exp_euler(&m, &[0.0, 0.0], 0.25, 1.0, 4, 1).unwrap();
    assert!(matches!(martingale_defect(&ens, &ValueOnly, &m, &[(0.0, 1.0)], &[]), Err(crate::Error::Capability(_))));
    assert!(matches!(resolvent_identity_check(&ens, &ValueOnly, &m, 2.0), Err(crate::Error::Capability(_))));
}

#[test]
fn resolvent_identity_truncation_and_exact_ou() {
    let m = kolmogorov();
    let ens = exp_euler(&m, &[0.3, -0.2], 1.0 / 64.0, 3.0, 4000, 21).unwrap();
    for lambda in [2.0, 8.0] {
        let r = resolvent_identity_check(&ens, &Constant::new(1.0), &m, lambda).unwrap();
        assert!((r.residual + (-lambda * 3.0f64).exp()).abs() < 1e-14, "{r:?}");
        assert_eq!(r.stderr, 0.0);
        assert!(r.within_bounds());
        for f in FunctionBattery::default_for(2).members() {
            let r = resolvent_identity_check(&ens, f.as_ref(), &m, lambda).unwrap();
            assert!(r.within_bounds(), "{r:?}");
        }
    }
}

#[test]
fn defect_ratio_on_ou_is_near_two() {
    // Euler on a linear model: the weak error is exactly linear in h at leading order.
    let m = damped();
    let f: Vec<FieldRef> = vec![Arc::new(GaussianBump::new("g", vec![0.0, 0.0], 1.0, 1.0))];
    let r = defect_ratio(&m, &[1.0, 0.5], &f, (0.0, 0.5), &[], 1.0 / 32.0, 4000, 3, 1000).unwrap();
    assert!(r[0].in_band(1.5, 2.5), "{:?}", r[0]);
    assert_eq!(r[0].defects.len(), 3);
}

#[test]
fn sup_lp_probe_contract() {
    let m = kolmogorov_ou();
    let grid = ZGrid::cube(2, 1.0, 3).points();
    assert_eq!(grid.len(), 9);
    let zero = probe_sup_lp(&m, &Constant::new(0.0), 4.0, 3.0, &grid, 50, 1).unwrap();
    assert_eq!(zero.sup_estimate, 0.0);
    assert!(zero.ratio.is_none());
    let err = probe_sup_lp(&m, &Constant::new(1.0), 4.0, 1.5, &grid, 50, 1).unwrap_err();
    assert!(err.to_string().contains("1.5"));
    let f: FieldRef = Arc::new(GaussianBump::new("g", vec![0.0, 0.0], 1.0, 1.0));
    let a = probe_sup_lp(&m, f.as_ref(), 4.0, 3.0, &grid, 200, 2).unwrap();
    let b = probe_sup_lp(&m, &Scaled::new(f.clone(), 3.0), 4.0, 3.0, &grid, 200, 2).unwrap();
    assert!((a.ratio.unwrap() - b.ratio.unwrap()).abs() < 1e-9 * a.ratio.unwrap());
    assert!(a.sup_estimate <= 1.0 / 4.0 + 1e-9);
}

#[test]
fn hessian_probe_contract() {
    let m = kolmogorov_ou();
    let grid = ZGrid::cube(2, 1.0, 3);
    assert!(probe_second_derivative(&m, &Constant::new(1.0), 4.0, 3.0, &grid, 0.5, 50, 1).is_err());
    // affine f: per-path second differences vanish up to rounding, so the probe is inconclusive at zero signal
    let lin = Linear { a: vec![1.0, 2.0], b: 0.5 };
    let r = probe_second_derivative(&m, &lin, 4.0, 3.0, &grid, 0.05, 50, 1).unwrap();
    assert!(r.inconclusive || r.lp_hessian.unwrap() < 1e-6, "{r:?}");
    let f: FieldRef = Arc::new(GaussianBump::new("g", vec![0.0, 0.0], 1.0, 1.0));
    let a = probe_second_derivative(&m, f.as_ref(), 8.0, 3.0, &grid, 0.05, 300, 4).unwrap();
    assert!(!a.inconclusive, "{a:?}");
    let b = probe_second_derivative(&m, &Scaled::new(f.clone(), 3.0), 8.0, 3.0, &grid, 0.05, 300, 4).unwrap();
    assert!((a.ratio.unwrap() - b.ratio.unwrap()).abs() < 1e-6 * a.ratio.unwrap());
    assert_eq!(ZGrid::cube(2, 1.0, 3).refined().per_axis, 5);
}
