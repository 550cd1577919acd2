use super::*;
use crate::field::{Constant, GaussianBump, Linear, SquaredNorm};

fn kolmogorov() -> OUModel {
    OUModel::new(DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), PsdMatrix::identity(1)).unwrap()
}

fn example_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0])
}

fn moments(ens: &PathEnsemble, ti: usize) -> (Vec<f64>, DMatrix<f64>) {
    let d = ens.dim;
    let n = ens.n_paths() as f64;
    let mut mean = vec![0.0; d];
    for p in 0..ens.n_paths() {
        for (m, x) in mean.iter_mut().zip(ens.state(p, ti)) {
            *m += x / n;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for p in 0..ens.n_paths() {
        let z = ens.state(p, ti);
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (z[i] - mean[i]) * (z[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

#[test]
fn kolmogorov_transition_closed_form() {
    let t = 0.7;
    let (mean, cov) = kolmogorov().ou_transition(&[1.0, 0.0], t).unwrap();
    assert!((mean[0] - 1.0).abs() < 1e-14 && (mean[1] - t).abs() < 1e-14);
    let want = DMatrix::from_row_slice(2, 2, &[t, t * t / 2.0, t * t / 2.0, t * t * t / 3.0]);
    assert!((cov.matrix() - want).norm() < 1e-13);
}

#[test]
fn transition_rejects_nonpositive_time() {
    assert!(kolmogorov().ou_transition(&[0.0, 0.0], 0.0).is_err());
}

#[test]
fn constructor_rejects_non_hypoelliptic() {
    let err = OUModel::new(DMatrix::zeros(2, 2), PsdMatrix::identity(1)).unwrap_err();
    assert!(matches!(err, Error::Hypothesis { .. }));
}

#[test]
fn one_step_sampler_matches_transition() {
    let m = OUModel::new(example_a(), PsdMatrix::identity(1)).unwrap();
    let z = [1.0, 1.0, 1.0];
    let n = 40_000;
    let ens = m.ou_sample_path(&z, &[0.0, 0.5], n, 3).unwrap();
    let (mean, cov) = moments(&ens, 1);
    let (mu, q) = m.ou_transition(&z, 0.5).unwrap();
    for i in 0..3 {
        let sd = q.matrix()[(i, i)].sqrt();
        assert!((mean[i] - mu[i]).abs() < 4.0 * sd / (n as f64).sqrt(), "coordinate {i}");
    }
    assert!((&cov - q.matrix()).norm() / q.matrix().norm() < 0.05);
}

#[test]
fn ten_steps_agree_with_one_step() {
    let m = kolmogorov();
    let n = 20_000;
    let one = m.ou_sample_path(&[0.5, -1.0], &[0.0, 1.0], n, 11).unwrap();
    let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let ten = m.ou_sample_path(&[0.5, -1.0], &grid, n, 12).unwrap();
    let (m1, c1) = moments(&one, 1);
    let (m10, c10) = moments(&ten, 10);
    for i in 0..2 {
        let se = ((c1[(i, i)] + c10[(i, i)]) / n as f64).sqrt();
        assert!((m1[i] - m10[i]).abs() < 4.0 * se);
    }
    assert!((c1 - c10).norm() < 0.05);
}

#[test]
fn zero_noise_sampler_follows_flow() {
    let m = kolmogorov();
    let ens = m.ou_sample_path(&[1.0, 2.0], &[0.0, 0.25, 0.5], 4, 0).unwrap();
    assert_eq!(ens.n_times(), 3);
    assert!(m.ou_sample_path(&[1.0, 2.0], &[0.0, 0.5, 0.5], 4, 0).is_err());
}

#[test]
fn semigroup_of_constant_is_exact() {
    let e = kolmogorov().semigroup_apply(&Constant::new(2.5), 1.0, &[0.3, 0.1], 100, 1).unwrap();
    assert_eq!(e.value, 2.5);
    assert_eq!(e.stderr, 0.0);
}

#[test]
fn semigroup_of_linear_and_quadratic() {
    let m = kolmogorov();
    let f = Linear { a: vec![1.0, -2.0], b: 0.0 };
    let z = [0.4, 1.0];
    let e = m.semigroup_apply(&f, 0.8, &z, 20_000, 5).unwrap();
    // e^{tA}z = (z1, z2 + t z1)
    let want = 0.4 - 2.0 * (1.0 + 0.8 * 0.4);
    assert!((e.value - want).abs() < 4.0 * e.stderr);

    let heat = OUModel::new(DMatrix::zeros(2, 2), PsdMatrix::identity(2)).unwrap();
    let e = heat.semigroup_apply(&SquaredNorm { offset: 0.0 }, 0.5, &z, 20_000, 6).unwrap();
    assert!((e.value - (0.16 + 1.0 + 0.5 * 2.0)).abs() < 4.0 * e.stderr);
}

#[test]
fn gradient_formula() {
    let m = kolmogorov();
    let t = 0.6;
    let dir = [0.3, -0.7];
    let lin = Linear { a: vec![1.5, 2.0], b: 1.0 };
    let g = m.semigroup_gradient(&lin, t, &[0.2, 0.1], &dir, 50, 2).unwrap();
    // ⟨a, e^{tA} h⟩
    let want = 1.5 * 0.3 + 2.0 * (-0.7 + t * 0.3);
    assert!((g.value - want).abs() < 1e-12 && g.stderr < 1e-12);

    let bump = GaussianBump::new("b", vec![0.5, 0.0], 1.0, 1.0);
    let z = [0.1, 0.2];
    let n = 20_000;
    let g = m.semigroup_gradient(&bump, t, &z, &dir, n, 9).unwrap();
    let eps = 1e-3;
    let plus = [z[0] + eps * dir[0], z[1] + eps * dir[1]];
    let minus = [z[0] - eps * dir[0], z[1] - eps * dir[1]];
    let fd = (m.semigroup_apply(&bump, t, &plus, n, 9).unwrap().value - m.semigroup_apply(&bump, t, &minus, n, 9).unwrap().value)
        / (2.0 * eps);
    assert!((g.value - fd).abs() < 4.0 * g.stderr + 1e-4, "{} vs {}", g.value, fd);

    let no_grad = crate::field::Scaled::new(std::sync::Arc::new(NoGrad), 1.0);
    assert!(matches!(m.semigroup_gradient(&no_grad, t, &z, &dir, 10, 1), Err(Error::Capability(_))));
}

struct NoGrad;
impl ScalarField for NoGrad {
    fn label(&self) -> &str {
        "nograd"
    }
    fn value(&self, _z: &[f64]) -> f64 {
        1.0
    }
}

#[test]
fn resolvent_of_one() {
    let m = kolmogorov();
    for lambda in [2.0, 8.0] {
        let r = m.resolvent_apply(&Constant::new(1.0), lambda, &[0.0, 0.0], 50, 1).unwrap();
        assert!((r.value - 1.0 / lambda).abs() <= r.tail_bound + 1e-12);
        assert_eq!(r.stderr, 0.0);
    }
}

#[test]
fn resolvent_rejects_small_lambda() {
    let m = kolmogorov();
    assert!((m.lambda_min() - 1.0).abs() < 1e-12);
    assert!(m.resolvent_apply(&Constant::new(1.0), 1.0, &[0.0, 0.0], 10, 1).is_err());
}

#[test]
fn abelian_limit() {
    let m = kolmogorov();
    let f = GaussianBump::new("b", vec![0.0, 0.0], 1.0, 1.0);
    let z = [0.3, -0.2];
    let f0 = f.value(&z);
    let errs: Vec<f64> = [2.0, 8.0, 32.0]
        .iter()
        .map(|&l| (l * m.resolvent_apply(&f, l, &z, 4000, 4).unwrap().value - f0).abs())
        .collect();
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
}

#[test]
fn stored_sampler_matches_streaming() {
    let m = kolmogorov();
    let f = GaussianBump::new("b", vec![0.0, 0.0], 1.0, 1.0);
    let s = ResolventSampler::new(&m, 4.0, 300, 21).unwrap();
    let a = s.estimate(&f, &[0.1, 0.2]).unwrap();
    let b = m.resolvent_apply(&f, 4.0, &[0.1, 0.2], 300, 21).unwrap();
    assert!((a.value - b.value).abs() < 1e-12, "{} {}", a.value, b.value);
}

#[test]
fn determinant_slopes() {
    let heat = OUModel::new(DMatrix::zeros(1, 1), PsdMatrix::identity(1)).unwrap();
    let s = heat.det_slope_default().unwrap();
    assert!((s.slope - 1.0).abs() < 0.02 && s.satisfies_bound());
    let s = kolmogorov().det_slope_default().unwrap();
    assert!((s.slope - 4.0).abs() < 0.05 && s.bound == 3);
    let ex = OUModel::new(example_a(), PsdMatrix::identity(1)).unwrap();
    let s = ex.det_slope_default().unwrap();
    assert!((s.slope - 9.0).abs() < 0.1, "{}", s.slope);
    assert_eq!(s.bound, 5);
    assert!(ex.det_smalltime_fit(&[0.1, 0.2]).is_err());
}

#[test]
fn lp_norm_of_gaussian() {
    // ∫ exp(-|z|²/2)² dz over ℝ² = π, so the L² norm is √π.
    let f = GaussianBump::new("g", vec![0.0, 0.0], 1.0, 1.0);
    let e = lp_norm_mc(&f, 2, 2.0, 100_000, 3);
    assert!((e.value - std::f64::consts::PI.sqrt()).abs() < 4.0 * e.stderr + 1e-3, "{e:?}");
}

#[test]
fn model_constants() {
    let ex = OUModel::new(example_a(), PsdMatrix::identity(1)).unwrap();
    assert_eq!(ex.k(), 2);
    assert_eq!(ex.p_default(), 4.0);
    // the eigenvalue 1 is defective, so it is only resolved to about √ε
    assert!((ex.abscissa - 1.0).abs() < 1e-6);
    assert!((ex.lambda_min() - 2.0).abs() < 1e-6);
    assert!(ex.growth_m >= 1.0);
}
