//! Scalar test fields `f: ℝ^d → ℝ` with optional derivatives.

use std::sync::Arc;

/// A real field on ℝ^d. Gradients and Hessians are written into caller
/// buffers (`d` and row-major `d*d` entries) so hot loops stay allocation-free.
pub trait ScalarField: Send + Sync {
    fn label(&self) -> &str;

    fn value(&self, z: &[f64]) -> f64;

    fn has_gradient(&self) -> bool {
        false
    }

    fn gradient(&self, _z: &[f64], _out: &mut [f64]) {
        unimplemented!("{} has no gradient", self.label())
    }

    fn has_hessian(&self) -> bool {
        false
    }

    fn hessian(&self, _z: &[f64], _out: &mut [f64]) {
        unimplemented!("{} has no Hessian", self.label())
    }

    /// `sup |f|` when known.
    fn sup_norm(&self) -> Option<f64> {
        None
    }
}

pub type FieldRef = Arc<dyn ScalarField>;

#[derive(Debug, Clone)]
pub struct Constant {
    pub c: f64,
    label: String,
}

impl Constant {
    pub fn new(c: f64) -> Self {
        Self { c, label: format!("const({c})") }
    }
}

impl ScalarField for Constant {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, _z: &[f64]) -> f64 {
        self.c
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.c.abs())
    }
}

/// `⟨a, z⟩ + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub a: Vec<f64>,
    pub b: f64,
}

impl ScalarField for Linear {
    fn label(&self) -> &str {
        "linear"
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.a.iter().zip(z).map(|(a, x)| a * x).sum::<f64>() + self.b
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, _z: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.a);
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, _z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// `|z|² + offset`.
#[derive(Debug, Clone)]
pub struct SquaredNorm {
    pub offset: f64,
}

impl ScalarField for SquaredNorm {
    fn label(&self) -> &str {
        "sqnorm"
    }
    fn value(&self, z: &[f64]) -> f64 {
        z.iter().map(|x| x * x).sum::<f64>() + self.offset
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(z) {
            *o = 2.0 * x;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = 2.0;
        }
    }
}

/// `amplitude · exp(-|z - c|² / (2 w²))`.
#[derive(Debug, Clone)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
    pub label: String,
}

impl GaussianBump {
    pub fn new(label: &str, center: Vec<f64>, width: f64, amplitude: f64) -> Self {
        Self { center, width, amplitude, label: label.to_string() }
    }
}

impl ScalarField for GaussianBump {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().zip(&self.center).map(|(x, c)| (x - c) * (x - c)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let v = self.value(z);
        let w2 = self.width * self.width;
        for ((o, x), c) in out.iter_mut().zip(z).zip(&self.center) {
            *o = -v * (x - c) / w2;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        let v = self.value(z);
        let w2 = self.width * self.width;
        for i in 0..d {
            let ui = (z[i] - self.center[i]) / w2;
            for j in 0..d {
                let uj = (z[j] - self.center[j]) / w2;
                let delta = if i == j { 1.0 / w2 } else { 0.0 };
                out[i * d + j] = v * (ui * uj - delta);
            }
        }
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.amplitude.abs())
    }
}

/// Product of compactly supported profiles `ψ((z_i - c_i)/r)`, `ψ(u) = (1-u²)⁴`
/// on `|u| < 1` and zero outside (C³ across the boundary).
#[derive(Debug, Clone)]
pub struct PolyBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
    pub label: String,
}

impl PolyBump {
    pub fn new(label: &str, center: Vec<f64>, radius: f64, amplitude: f64) -> Self {
        Self { center, radius, amplitude, label: label.to_string() }
    }

    // (ψ, ψ', ψ'') at u
    fn profile(u: f64) -> (f64, f64, f64) {
        if u.abs() >= 1.0 {
            return (0.0, 0.0, 0.0);
        }
        let s = 1.0 - u * u;
        let s2 = s * s;
        let s3 = s2 * s;
        (s2 * s2, -8.0 * u * s3, -8.0 * s3 + 48.0 * u * u * s2)
    }

    fn profiles(&self, z: &[f64]) -> Vec<(f64, f64, f64)> {
        z.iter().zip(&self.center).map(|(x, c)| Self::profile((x - c) / self.radius)).collect()
    }
}

impl ScalarField for PolyBump {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, z: &[f64]) -> f64 {
        let mut v = self.amplitude;
        for (x, c) in z.iter().zip(&self.center) {
            v *= Self::profile((x - c) / self.radius).0;
            if v == 0.0 {
                break;
            }
        }
        v
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let p = self.profiles(z);
        for i in 0..z.len() {
            let mut g = self.amplitude * p[i].1 / self.radius;
            for (j, pj) in p.iter().enumerate() {
                if j != i {
                    g *= pj.0;
                }
            }
            out[i] = g;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        let p = self.profiles(z);
        let r2 = self.radius * self.radius;
        for i in 0..d {
            for j in 0..d {
                let mut h = self.amplitude / r2;
                for (k, pk) in p.iter().enumerate() {
                    h *= if i == j && k == i {
                        pk.2
                    } else if k == i || k == j {
                        pk.1
                    } else {
                        pk.0
                    };
                }
                out[i * d + j] = h;
            }
        }
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.amplitude.abs())
    }
}

/// `amplitude · sin(⟨ω, z⟩ + phase)`.
#[derive(Debug, Clone)]
pub struct Trig {
    pub omega: Vec<f64>,
    pub phase: f64,
    pub amplitude: f64,
    pub label: String,
}

impl ScalarField for Trig {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.amplitude * (self.arg(z)).sin()
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let c = self.amplitude * self.arg(z).cos();
        for (o, w) in out.iter_mut().zip(&self.omega) {
            *o = c * w;
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        let s = -self.amplitude * self.arg(z).sin();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = s * self.omega[i] * self.omega[j];
            }
        }
    }
    fn sup_norm(&self) -> Option<f64> {
        Some(self.amplitude.abs())
    }
}

impl Trig {
    fn arg(&self, z: &[f64]) -> f64 {
        self.omega.iter().zip(z).map(|(w, x)| w * x).sum::<f64>() + self.phase
    }
}

/// `c · f`.
#[derive(Clone)]
pub struct Scaled {
    pub inner: FieldRef,
    pub c: f64,
    label: String,
}

impl Scaled {
    pub fn new(inner: FieldRef, c: f64) -> Self {
        let label = format!("{}*{}", c, inner.label());
        Self { inner, c, label }
    }
}

impl ScalarField for Scaled {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.c * self.inner.value(z)
    }
    fn has_gradient(&self) -> bool {
        self.inner.has_gradient()
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        self.inner.gradient(z, out);
        out.iter_mut().for_each(|x| *x *= self.c);
    }
    fn has_hessian(&self) -> bool {
        self.inner.has_hessian()
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        self.inner.hessian(z, out);
        out.iter_mut().for_each(|x| *x *= self.c);
    }
    fn sup_norm(&self) -> Option<f64> {
        self.inner.sup_norm().map(|s| s * self.c.abs())
    }
}
