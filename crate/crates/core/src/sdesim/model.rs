use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Error, Result};
use crate::field::{FieldRef, ScalarField};
use crate::matcore::{kalman_index, KalmanReport, PsdMatrix};
use crate::oukernel::OUModel;

/// Outcome of a pointwise coefficient evaluation; the error carries a description.
pub type CoeffResult = std::result::Result<(), String>;

/// Vector- or matrix-valued coefficient `z ↦ out` (row-major for matrices).
pub type CoeffFn = Arc<dyn Fn(&[f64], &mut [f64]) -> CoeffResult + Send + Sync>;

#[derive(Clone)]
pub enum Drift {
    Zero,
    /// `b₀: ℝ^d → ℝ^{d₀}`.
    Field(CoeffFn),
}

#[derive(Clone)]
pub enum Noise {
    /// `B₀: ℝ^d → ℝ^{d₀×r}`.
    Factor { r: usize, f: CoeffFn, constant: bool },
    /// `Q₀: ℝ^d → ℝ^{d₀×d₀}`; a Cholesky factor plays the role of `B₀`.
    Covariance { f: CoeffFn, constant: bool },
}

#[derive(Clone)]
pub struct Lyapunov {
    pub phi: FieldRef,
    /// Growth constant in `Lφ ≤ Cφ`.
    pub c: f64,
    pub provenance: String,
}

/// `dZ = AZ dt + lift(b₀(Z)) dt + lift(B₀(Z)) dW`, where `lift` pads the
/// lower `d - d₀` rows with zeros.
#[derive(Clone)]
pub struct SdeModel {
    pub label: String,
    a: DMatrix<f64>,
    a_flat: Vec<f64>,
    d0: usize,
    drift: Drift,
    noise: Noise,
    pub lyapunov: Option<Lyapunov>,
    kalman: KalmanReport,
}

impl std::fmt::Debug for SdeModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("label", &self.label)
            .field("d", &self.dim())
            .field("d0", &self.d0)
            .field("r", &self.r())
            .finish()
    }
}

impl SdeModel {
    /// Hypoellipticity is recorded but not enforced here; see [`Self::require_hypoelliptic`].
    pub fn new(label: impl Into<String>, a: DMatrix<f64>, d0: usize, drift: Drift, noise: Noise) -> Result<Self> {
        let d = a.nrows();
        if !a.is_square() || d == 0 {
            return Err(invalid("A must be a non-empty square matrix"));
        }
        if d0 == 0 || d0 > d {
            return Err(invalid(format!("need 1 <= d0 <= d, got d0={d0}, d={d}")));
        }
        if let Noise::Factor { r, .. } = &noise {
            if *r == 0 {
                return Err(invalid("noise dimension r must be >= 1"));
            }
        }
        let kalman = kalman_index(&a, d0)?;
        let a_flat = (0..d * d).map(|k| a[(k / d, k % d)]).collect();
        Ok(Self { label: label.into(), a, a_flat, d0, drift, noise, lyapunov: None, kalman })
    }

    /// Constant-coefficient model with `Q₀` fixed and optional constant drift.
    pub fn constant(label: &str, a: DMatrix<f64>, q0: &PsdMatrix, b0: Option<Vec<f64>>) -> Result<Self> {
        let d0 = q0.dim();
        let chol = q0
            .matrix()
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Hypothesis { witness: vec![], detail: "Q0 not positive definite".into() })?;
        let l = chol.l();
        let flat: Vec<f64> = (0..d0 * d0).map(|k| l[(k / d0, k % d0)]).collect();
        let noise = Noise::Factor {
            r: d0,
            f: Arc::new(move |_z, out| {
                out.copy_from_slice(&flat);
                Ok(())
            }),
            constant: true,
        };
        let drift = match b0 {
            Some(c) if c.iter().any(|&x| x != 0.0) => {
                if c.len() != d0 {
                    return Err(invalid("constant drift must have d0 entries"));
                }
                Drift::Field(Arc::new(move |_z, out| {
                    out.copy_from_slice(&c);
                    Ok(())
                }))
            }
            _ => Drift::Zero,
        };
        Self::new(label, a, d0, drift, noise)
    }

    pub fn with_lyapunov(mut self, phi: FieldRef, c: f64, provenance: impl Into<String>) -> Self {
        self.lyapunov = Some(Lyapunov { phi, c, provenance: provenance.into() });
        self
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn d0(&self) -> usize {
        self.d0
    }

    pub fn r(&self) -> usize {
        match &self.noise {
            Noise::Factor { r, .. } => *r,
            Noise::Covariance { .. } => self.d0,
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub(crate) fn a_flat(&self) -> &[f64] {
        &self.a_flat
    }

    pub fn kalman(&self) -> &KalmanReport {
        &self.kalman
    }

    pub fn require_hypoelliptic(&self) -> Result<()> {
        if self.kalman.k.is_none() {
            return Err(Error::Hypothesis {
                witness: vec![],
                detail: format!("Kalman rank condition fails for {}: ranks {:?}", self.label, self.kalman.rank_sequence),
            });
        }
        Ok(())
    }

    pub fn drift_is_zero(&self) -> bool {
        matches!(self.drift, Drift::Zero)
    }

    pub fn noise_is_constant(&self) -> bool {
        match &self.noise {
            Noise::Factor { constant, .. } | Noise::Covariance { constant, .. } => *constant,
        }
    }

    pub fn drift(&self) -> &Drift {
        &self.drift
    }

    pub fn noise(&self) -> &Noise {
        &self.noise
    }

    /// `b₀(z)` into `out` (length `d₀`).
    #[inline]
    pub fn eval_b0(&self, z: &[f64], out: &mut [f64]) -> CoeffResult {
        match &self.drift {
            Drift::Zero => {
                out.fill(0.0);
                Ok(())
            }
            Drift::Field(f) => f(z, out),
        }
    }

    /// A factor `B₀(z)` (`d₀ × r`, row-major) with `B₀B₀ᵀ = Q₀(z)`.
    #[inline]
    pub fn eval_b0_factor(&self, z: &[f64], out: &mut [f64]) -> CoeffResult {
        match &self.noise {
            Noise::Factor { f, .. } => f(z, out),
            Noise::Covariance { f, .. } => {
                f(z, out)?;
                cholesky_in_place(out, self.d0)
            }
        }
    }

    /// `Q₀(z)` into `out` (`d₀ × d₀`, row-major).
    pub fn eval_q0(&self, z: &[f64], out: &mut [f64]) -> CoeffResult {
        match &self.noise {
            Noise::Covariance { f, .. } => f(z, out),
            Noise::Factor { r, f, .. } => {
                let d0 = self.d0;
                let mut small = [0.0; 16];
                let mut heap = Vec::new();
                let b: &mut [f64] = if d0 * r <= small.len() {
                    &mut small[..d0 * r]
                } else {
                    heap.resize(d0 * r, 0.0);
                    &mut heap
                };
                f(z, b)?;
                for i in 0..d0 {
                    for j in 0..d0 {
                        out[i * d0 + j] = (0..*r).map(|c| b[i * r + c] * b[j * r + c]).sum();
                    }
                }
                Ok(())
            }
        }
    }

    pub fn q0_matrix(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let d0 = self.d0;
        let mut buf = vec![0.0; d0 * d0];
        self.eval_q0(z, &mut buf).map_err(|detail| Error::Evaluation { point: z.to_vec(), detail })?;
        if buf.iter().any(|x| !x.is_finite()) {
            return Err(Error::Evaluation { point: z.to_vec(), detail: "Q0 not finite".into() });
        }
        Ok(DMatrix::from_row_slice(d0, d0, &buf))
    }

    pub fn b0_vector(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d0];
        self.eval_b0(z, &mut out).map_err(|detail| Error::Evaluation { point: z.to_vec(), detail })?;
        Ok(out)
    }

    /// Kolmogorov operator `Lf(z) = ½Tr(Q₀ D²ₓf) + ⟨Az, Df⟩ + ⟨b₀, Dₓf⟩`.
    pub fn generator(&self, f: &dyn ScalarField, z: &[f64]) -> Result<f64> {
        let mut scratch = GeneratorScratch::new(self.dim(), self.d0);
        self.generator_with(f, z, &mut scratch)
    }

    pub(crate) fn generator_with(&self, f: &dyn ScalarField, z: &[f64], s: &mut GeneratorScratch) -> Result<f64> {
        if !f.has_hessian() || !f.has_gradient() {
            return Err(Error::Capability(format!("{} lacks gradient/Hessian evaluators", f.label())));
        }
        let d = self.dim();
        let d0 = self.d0;
        f.gradient(z, &mut s.grad);
        f.hessian(z, &mut s.hess);
        let fail = |detail: String| Error::Evaluation { point: z.to_vec(), detail };
        self.eval_q0(z, &mut s.q0).map_err(fail)?;
        self.eval_b0(z, &mut s.b0).map_err(fail)?;
        let mut diff = 0.0;
        for i in 0..d0 {
            for j in 0..d0 {
                diff += s.q0[i * d0 + j] * s.hess[j * d + i];
            }
        }
        let mut lin = 0.0;
        for i in 0..d {
            let az: f64 = (0..d).map(|j| self.a_flat[i * d + j] * z[j]).sum();
            lin += az * s.grad[i];
        }
        let drift: f64 = (0..d0).map(|i| s.b0[i] * s.grad[i]).sum();
        Ok(0.5 * diff + lin + drift)
    }

    /// Same model with `b₀` replaced by `b₀ + shift`.
    pub fn with_drift_shift(&self, shift: Vec<f64>) -> Result<Self> {
        if shift.len() != self.d0 {
            return Err(invalid("drift shift must have d0 entries"));
        }
        let base = self.drift.clone();
        let f: CoeffFn = Arc::new(move |z, out| {
            match &base {
                Drift::Zero => out.fill(0.0),
                Drift::Field(g) => g(z, out)?,
            }
            for (o, s) in out.iter_mut().zip(&shift) {
                *o += s;
            }
            Ok(())
        });
        let mut m = self.clone();
        m.drift = Drift::Field(f);
        m.label = format!("{}+drift-shift", self.label);
        Ok(m)
    }

    /// Same model with `b₀ ≡ 0`.
    pub fn without_drift(&self) -> Self {
        let mut m = self.clone();
        m.drift = Drift::Zero;
        m.label = format!("{}-driftless", self.label);
        m
    }

    pub fn with_drift(&self, drift: Drift) -> Self {
        let mut m = self.clone();
        m.drift = drift;
        m
    }

    pub fn with_noise(&self, noise: Noise) -> Self {
        let mut m = self.clone();
        m.noise = noise;
        m
    }

    /// OU model with `Q₀` frozen at `z`.
    pub fn frozen_ou(&self, z: &[f64]) -> Result<OUModel> {
        let q0 = PsdMatrix::new(self.q0_matrix(z)?)?;
        OUModel::new(self.a.clone(), q0)
    }
}

pub(crate) struct GeneratorScratch {
    grad: Vec<f64>,
    hess: Vec<f64>,
    q0: Vec<f64>,
    b0: Vec<f64>,
}

impl GeneratorScratch {
    pub(crate) fn new(d: usize, d0: usize) -> Self {
        Self { grad: vec![0.0; d], hess: vec![0.0; d * d], q0: vec![0.0; d0 * d0], b0: vec![0.0; d0] }
    }
}

/// Lower Cholesky factor of an `n × n` row-major matrix, in place.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> CoeffResult {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) {
            return Err(format!("Q0 not positive definite (pivot {diag:e} at {j})"));
        }
        let l = diag.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / l;
        }
        for k in j + 1..n {
            a[j * n + k] = 0.0;
        }
    }
    Ok(())
}
