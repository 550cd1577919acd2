use super::*;
use crate::field::ScalarField;
use crate::rng::aux_stream;

fn random_points(d: usize, n: usize, radius: f64) -> Vec<Vec<f64>> {
    let mut rng = aux_stream(5, 1);
    (0..n)
        .map(|_| {
            let mut z = vec![0.0; d];
            uniform_in_ball(&mut rng, d, radius, &mut z);
            z
        })
        .collect()
}

#[test]
fn builtins_match_their_expression_form() {
    for name in BUILTIN_NAMES {
        let spec = builtin(name).unwrap();
        let native = builtin_model(name, BuiltinOptions::default()).unwrap();
        let parsed = spec.build().unwrap();
        let (d, d0, r) = (native.dim(), native.d0(), native.r());
        assert_eq!((parsed.dim(), parsed.d0(), parsed.r()), (d, d0, r));
        assert_eq!(native.a(), parsed.a());
        let mut mid = random_points(d, 200, 4.0);
        mid.push(vec![0.0; d]);
        for z in &mid {
            let (mut a, mut b) = (vec![0.0; d0], vec![0.0; d0]);
            native.eval_b0(z, &mut a).unwrap();
            parsed.eval_b0(z, &mut b).unwrap();
            assert_eq!(a, b, "{name} drift at {z:?}");
            let (mut a, mut b) = (vec![0.0; d0 * r], vec![0.0; d0 * r]);
            native.eval_b0_factor(z, &mut a).unwrap();
            parsed.eval_b0_factor(z, &mut b).unwrap();
            assert_eq!(a, b, "{name} noise at {z:?}");
        }
    }
}

#[test]
fn paper_example_facts() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    assert_eq!(m.kalman().k, Some(2));
    // y = 0 convention and the ±1 offset.
    for x in [-1.5, 0.0, 2.0] {
        assert_eq!(m.b0_vector(&[x, 0.0, 3.0]).unwrap()[0], -x * x * x);
        assert_eq!(m.b0_vector(&[x, 0.2, 3.0]).unwrap()[0], -x.powi(3) + 1.0);
        assert_eq!(m.b0_vector(&[x, -7.0, 3.0]).unwrap()[0], -x.powi(3) - 1.0);
    }
}

#[test]
fn kolmogorov_and_ou_constant() {
    let k = builtin_model("kolmogorov-2d", BuiltinOptions::default()).unwrap();
    let g = crate::matcore::gramian(k.a(), &crate::matcore::PsdMatrix::identity(1).lift(2), 0.5).unwrap();
    assert!((g.matrix().determinant() - 0.5f64.powi(4) / 12.0).abs() < 1e-15);
    let ou = builtin_model("ou-constant", BuiltinOptions { d: 3, d0: 3 }).unwrap();
    assert_eq!(ou.kalman().k, Some(0));
    let ou = builtin_model("ou-constant", BuiltinOptions { d: 4, d0: 1 }).unwrap();
    assert_eq!(ou.kalman().k, Some(3));
    assert!(matches!(builtin("nope"), Err(crate::Error::Lookup { .. })));
    assert!(builtin_with("ou-constant", BuiltinOptions { d: 1, d0: 2 }).is_err());
}

#[test]
fn load_model_prefers_native_only_for_unmodified_builtins() {
    let spec = builtin("paper-ex1").unwrap();
    assert!(load_model(&spec).unwrap().lyapunov.unwrap().provenance.contains("sampled"));
    let mut changed = spec.clone();
    changed.b0_factor = Some(vec![vec!["1.5".into()]]);
    let m = load_model(&changed).unwrap();
    let mut b = [0.0];
    m.eval_b0_factor(&[0.3, 0.0, 0.0], &mut b).unwrap();
    assert_eq!(b[0], 1.5);
}

#[test]
fn spec_json_round_trip_and_errors() {
    let spec = builtin("paper-ex1").unwrap();
    let text = serde_json::to_string(&spec).unwrap();
    assert!(text.contains("\"A\"") && text.contains("\"B0\""));
    assert_eq!(ModelSpec::from_json(&text).unwrap(), spec);

    let bad = r#"{"d": 2, "d0": 3, "A": [[0,0],[0,0]], "B0": [["1"]]}"#;
    assert!(matches!(ModelSpec::from_json(bad).unwrap().build(), Err(crate::Error::InvalidInput(_))));
    let unknown = r#"{"d": 1, "d0": 1, "A": [[0]], "B0": [["q"]]}"#;
    assert!(matches!(ModelSpec::from_json(unknown).unwrap().build(), Err(crate::Error::Expr(_))));
    let both = r#"{"d": 1, "d0": 1, "A": [[0]], "B0": [["1"]], "Q0": [["1"]]}"#;
    assert!(ModelSpec::from_json(both).unwrap().build().is_err());
}

#[test]
fn validate_paper_example() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    let r = validate(&m, 3.0, 2000, 1).unwrap();
    assert!(r.passed(), "{:?}", r.violations);
    assert_eq!(r.kalman.k, Some(2));
    let ly = r.lyapunov_check.unwrap();
    assert!(ly.sampled_max.is_finite() && ly.sampled_max < PAPER_EX1_C);
    assert!(ly.sampled_max > 2.0);
    assert!(r.min_eigenvalue >= 1.0 - 1e-12);
    assert!(r.summary.contains("not asserted"));
    assert!(validate(&m, 3.0, 10, 1).is_err());
}

#[test]
fn lyapunov_generator_matches_closed_form() {
    let m = builtin_model("paper-ex1", BuiltinOptions::default()).unwrap();
    let ly = m.lyapunov.clone().unwrap();
    let parsed = builtin("paper-ex1").unwrap().build().unwrap();
    let lyp = parsed.lyapunov.clone().unwrap();
    for z in random_points(3, 50, 3.0) {
        let (x, y, w) = (z[0], z[1], z[2]);
        let want = 2.0 + x.tanh() + 2.0 * (-x.powi(3) + y.signum()) * x + 2.0 * (x + y) * y + 2.0 * (y + w) * w;
        assert!((m.generator(&*ly.phi, &z).unwrap() - want).abs() < 1e-12);
        assert!((parsed.generator(&*lyp.phi, &z).unwrap() - want).abs() < 1e-5 * want.abs().max(1.0));
    }
}

#[test]
fn forced_violation_and_full_rank() {
    let spec = ModelSpec::from_json(r#"{"d": 1, "d0": 1, "A": [[0]], "Q0": [["-1"]]}"#).unwrap();
    let r = validate(&spec.build().unwrap(), 1.0, 100, 0).unwrap();
    assert!(!r.passed());
    assert_eq!(r.violations[0].kind, "ellipticity");
    assert_eq!(r.kalman.k, Some(0));
}

#[test]
fn expr_field_derivatives() {
    let vars: Vec<String> = ["x", "y"].iter().map(|s| s.to_string()).collect();
    let f = ExprField::new("f", parse_coeff_expr("sin(x) * y^2", &vars).unwrap());
    let z = [0.4, -1.3];
    let mut g = [0.0; 2];
    f.gradient(&z, &mut g);
    assert!((g[0] - 0.4f64.cos() * 1.69).abs() < 1e-8);
    assert!((g[1] - 0.4f64.sin() * 2.0 * -1.3).abs() < 1e-8);
    let mut h = [0.0; 4];
    f.hessian(&z, &mut h);
    assert!((h[0] + 0.4f64.sin() * 1.69).abs() < 1e-5);
    assert!((h[1] - 0.4f64.cos() * 2.0 * -1.3).abs() < 1e-5);
    assert!((h[3] - 0.4f64.sin() * 2.0).abs() < 1e-5);
}
