//! Small statistics helpers shared by the Monte Carlo estimators.

use serde::{Deserialize, Serialize};

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, stderr: 0.0 }
    }

    /// Sample mean and standard error of the mean; summation runs in slice order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { value: f64::NAN, stderr: f64::NAN };
        }
        if xs.iter().all(|&x| x == xs[0]) {
            return Self { value: xs[0], stderr: if n == 1 { f64::INFINITY } else { 0.0 } };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return Self { value: mean, stderr: f64::INFINITY };
        }
        let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
        let var = ss / (n as f64 - 1.0);
        Self { value: mean, stderr: (var / n as f64).sqrt() }
    }

    /// z-score of the difference of two independent estimates.
    pub fn z_score(&self, other: &Estimate) -> f64 {
        let diff = self.value - other.value;
        let se = (self.stderr * self.stderr + other.stderr * other.stderr).sqrt();
        if se == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            }
        } else {
            diff / se
        }
    }
}

/// Ordinary least squares fit `y = slope * x + intercept`; returns the
/// root-mean-square residual as the third component.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - slope * x - intercept;
            r * r
        })
        .sum();
    (slope, intercept, (rss / n).sqrt())
}

/// Geometric grid with `n` points from `lo` to `hi` inclusive.
pub fn geomspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2 && lo > 0.0 && hi > lo);
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// Weights `w_i` with `Σ w_i g(t_i) = ∫_{t_0}^{t_N} e^{-λt} ĝ(t) dt`, where `ĝ`
/// is the piecewise-linear interpolant of `g` on the grid. The exponential
/// factor is integrated exactly, so constant `g` is integrated without error.
pub fn laplace_weights(times: &[f64], lambda: f64) -> Vec<f64> {
    let n = times.len();
    let mut w = vec![0.0; n];
    for i in 0..n.saturating_sub(1) {
        let (a, b) = (times[i], times[i + 1]);
        let h = b - a;
        let x = lambda * h;
        let ea = (-lambda * a).exp();
        // ∫_a^b e^{-λt} dt and ∫_a^b (t-a) e^{-λt} dt
        let i0 = -ea * (-x).exp_m1() / lambda;
        let i1 = if x < 1.0 {
            // 1 - e^{-x}(1 + x) = Σ_{n≥2} (-1)^n (n-1) x^n / n!, summed without cancellation
            let (mut sum, mut pow_fact, mut n) = (0.0f64, 0.5f64, 2.0f64);
            loop {
                let term = (n - 1.0) * pow_fact;
                sum += term;
                if term.abs() < 1e-17 * sum.abs() {
                    break;
                }
                n += 1.0;
                pow_fact *= -x / n;
            }
            ea * h * h * sum
        } else {
            (ea - (-lambda * b).exp() * (1.0 + x)) / (lambda * lambda)
        };
        w[i + 1] += i1 / h;
        w[i] += i0 - i1 / h;
    }
    w
}
