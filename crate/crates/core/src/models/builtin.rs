use std::sync::Arc;

use nalgebra::DMatrix;

use super::spec::ModelSpec;
use crate::error::{invalid, Error, Result};
use crate::field::SquaredNorm;
use crate::matcore::{rows_of, PsdMatrix};
use crate::sdesim::{CoeffFn, Drift, Noise, SdeModel};

pub const BUILTIN_NAMES: [&str; 3] = ["paper-ex1", "kolmogorov-2d", "ou-constant"];

/// Declared Lyapunov constant for `paper-ex1` with `φ = |z|² + 1`.
/// The sampled maximum of `Lφ/φ` over `B(0, 3)` is about 3.22.
pub const PAPER_EX1_C: f64 = 12.0;

/// Dimensions for `ou-constant`; ignored by the fixed-size builtins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuiltinOptions {
    pub d: usize,
    pub d0: usize,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        Self { d: 2, d0: 1 }
    }
}

fn lookup_error(name: &str) -> Error {
    Error::Lookup { name: name.to_string(), available: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect() }
}

fn example_a() -> DMatrix<f64> {
    DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0])
}

fn ou_constant_a(d: usize) -> DMatrix<f64> {
    let mut a = DMatrix::identity(d, d) * -0.5;
    for i in 1..d {
        a[(i, i - 1)] = 1.0;
    }
    a
}

pub fn builtin(name: &str) -> Result<ModelSpec> {
    builtin_with(name, BuiltinOptions::default())
}

/// Expression form of a builtin model.
pub fn builtin_with(name: &str, opts: BuiltinOptions) -> Result<ModelSpec> {
    let s = |x: &str| x.to_string();
    match name {
        "paper-ex1" => Ok(ModelSpec {
            name: Some(s(name)),
            d: 3,
            d0: 1,
            r: Some(1),
            a: rows_of(&example_a()),
            b0: Some(vec![s("-x^3 + sgn(y)")]),
            b0_factor: Some(vec![vec![s("sqrt(2 + tanh(x))")]]),
            q0: None,
            phi: Some(s("x^2 + y^2 + z^2 + 1")),
            c: Some(PAPER_EX1_C),
            vars: Some(vec![s("x"), s("y"), s("z")]),
        }),
        "kolmogorov-2d" => Ok(ModelSpec {
            name: Some(s(name)),
            d: 2,
            d0: 1,
            r: Some(1),
            a: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            b0: Some(vec![s("0")]),
            b0_factor: Some(vec![vec![s("1")]]),
            q0: None,
            phi: None,
            c: None,
            vars: None,
        }),
        "ou-constant" => {
            let BuiltinOptions { d, d0 } = opts;
            if d == 0 || d0 == 0 || d0 > d {
                return Err(invalid(format!("ou-constant needs 1 <= d0 <= d, got d = {d}, d0 = {d0}")));
            }
            let eye = (0..d0).map(|i| (0..d0).map(|j| s(if i == j { "1" } else { "0" })).collect()).collect();
            Ok(ModelSpec {
                name: Some(s(name)),
                d,
                d0,
                r: Some(d0),
                a: rows_of(&ou_constant_a(d)),
                b0: Some(vec![s("0"); d0]),
                b0_factor: Some(eye),
                q0: None,
                phi: None,
                c: None,
                vars: None,
            })
        }
        _ => Err(lookup_error(name)),
    }
}

/// Builtin with native coefficient closures (same values as the expression form).
pub fn builtin_model(name: &str, opts: BuiltinOptions) -> Result<SdeModel> {
    match name {
        "paper-ex1" => {
            let drift: CoeffFn = Arc::new(|z, out| {
                let y = z[1];
                let sgn = if y > 0.0 {
                    1.0
                } else if y < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                out[0] = -z[0].powi(3) + sgn;
                Ok(())
            });
            let noise: CoeffFn = Arc::new(|z, out| {
                out[0] = (2.0 + z[0].tanh()).sqrt();
                Ok(())
            });
            Ok(SdeModel::new(name, example_a(), 1, Drift::Field(drift), Noise::Factor { r: 1, f: noise, constant: false })?
                .with_lyapunov(
                    Arc::new(SquaredNorm { offset: 1.0 }),
                    PAPER_EX1_C,
                    "declared; sampled max of Lphi/phi on B(0,3) is about 3.22",
                ))
        }
        "kolmogorov-2d" => {
            SdeModel::constant(name, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]), &PsdMatrix::identity(1), None)
        }
        "ou-constant" => {
            builtin_with(name, opts)?;
            SdeModel::constant(name, ou_constant_a(opts.d), &PsdMatrix::identity(opts.d0), None)
        }
        _ => Err(lookup_error(name)),
    }
}

/// Build a model from a [`ModelSpec`], using the native builtin when it is an
/// unmodified builtin and the expression evaluators otherwise.
pub fn load_model(spec: &ModelSpec) -> Result<SdeModel> {
    if let Some(name) = spec.name.as_deref() {
        if BUILTIN_NAMES.contains(&name) {
            let opts = BuiltinOptions { d: spec.d, d0: spec.d0 };
            if builtin_with(name, opts).ok().as_ref() == Some(spec) {
                return builtin_model(name, opts);
            }
        }
    }
    spec.build()
}
