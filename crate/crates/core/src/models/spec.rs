use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expr::{parse_coeff_expr, CoeffExpr};
use crate::error::{invalid, Error, Result};
use crate::field::{FieldRef, ScalarField};
use crate::matcore::square_from_rows;
use crate::sdesim::{CoeffFn, Drift, Noise, SdeModel};

/// JSON description of a model. Exactly one of `B0` (a `d0 × r` factor)
/// and `Q0` (a `d0 × d0` covariance) is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub d: usize,
    pub d0: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<Vec<String>>,
    #[serde(rename = "B0", default, skip_serializing_if = "Option::is_none")]
    pub b0_factor: Option<Vec<Vec<String>>>,
    #[serde(rename = "Q0", default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(rename = "C", default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vars: Option<Vec<String>>,
}

/// Parsed coefficient expressions of a [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct CompiledSpec {
    pub vars: Vec<String>,
    pub b0: Option<Vec<CoeffExpr>>,
    /// Row-major `d0 × r` (factor) or `d0 × d0` (covariance).
    pub noise: Vec<CoeffExpr>,
    pub noise_is_factor: bool,
    pub r: usize,
    pub phi: Option<CoeffExpr>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("model JSON: {e}")))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "custom".into())
    }

    pub fn variables(&self) -> Vec<String> {
        match &self.vars {
            Some(v) => v.clone(),
            None => (1..=self.d).map(|i| format!("z{i}")).collect(),
        }
    }

    /// Check shapes and parse every expression.
    pub fn compile(&self) -> Result<CompiledSpec> {
        let (d, d0) = (self.d, self.d0);
        if d == 0 || d0 == 0 || d0 > d {
            return Err(invalid(format!("need 1 <= d0 <= d, got d = {d}, d0 = {d0}")));
        }
        if self.a.len() != d || self.a.iter().any(|row| row.len() != d) {
            return Err(invalid(format!("A must be {d}x{d}")));
        }
        let vars = self.variables();
        if vars.len() != d {
            return Err(invalid(format!("vars lists {} names for d = {d}", vars.len())));
        }
        let parse = |src: &str| parse_coeff_expr(src, &vars).map_err(Error::from);
        let b0 = match &self.b0 {
            None => None,
            Some(list) => {
                if list.len() != d0 {
                    return Err(invalid(format!("b0 needs {d0} expressions, got {}", list.len())));
                }
                let parsed = list.iter().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
                if parsed.iter().all(CoeffExpr::is_constant_zero) {
                    None
                } else {
                    Some(parsed)
                }
            }
        };
        let (rows, factor) = match (&self.b0_factor, &self.q0) {
            (Some(b), None) => (b, true),
            (None, Some(q)) => (q, false),
            _ => return Err(invalid("give exactly one of B0 and Q0")),
        };
        if rows.len() != d0 {
            return Err(invalid(format!("noise matrix needs {d0} rows, got {}", rows.len())));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) || width == 0 {
            return Err(invalid("noise matrix rows have unequal or zero length"));
        }
        if !factor && width != d0 {
            return Err(invalid(format!("Q0 must be {d0}x{d0}")));
        }
        if let Some(r) = self.r {
            if factor && r != width {
                return Err(invalid(format!("r = {r} but B0 has {width} columns")));
            }
        }
        let noise = rows.iter().flatten().map(|s| parse(s)).collect::<Result<Vec<_>>>()?;
        let phi = self.phi.as_deref().map(parse).transpose()?;
        Ok(CompiledSpec { vars, b0, noise, noise_is_factor: factor, r: width, phi })
    }

    /// Build a simulation model whose coefficients evaluate the parsed expressions.
    pub fn build(&self) -> Result<SdeModel> {
        let c = self.compile()?;
        let a = square_from_rows(&self.a)?;
        let drift = match c.b0 {
            None => Drift::Zero,
            Some(exprs) => Drift::Field(expr_vector(exprs)),
        };
        let constant = c.noise.iter().all(CoeffExpr::is_constant);
        let f = expr_vector(c.noise);
        let noise = if c.noise_is_factor { Noise::Factor { r: c.r, f, constant } } else { Noise::Covariance { f, constant } };
        let mut model = SdeModel::new(self.label(), a, self.d0, drift, noise)?;
        if let Some(phi) = c.phi {
            let field: FieldRef = Arc::new(ExprField::new("phi", phi));
            let provenance = if self.c.is_some() { "declared" } else { "unset" };
            model = model.with_lyapunov(field, self.c.unwrap_or(f64::INFINITY), provenance);
        }
        Ok(model)
    }
}

fn expr_vector(exprs: Vec<CoeffExpr>) -> CoeffFn {
    Arc::new(move |z, out| {
        for (o, e) in out.iter_mut().zip(&exprs) {
            *o = e.eval(z).map_err(|err| err.to_string())?;
        }
        Ok(())
    })
}

/// A scalar field given by an expression; derivatives by central differences.
#[derive(Debug, Clone)]
pub struct ExprField {
    label: String,
    expr: CoeffExpr,
}

impl ExprField {
    pub fn new(label: &str, expr: CoeffExpr) -> Self {
        Self { label: label.to_string(), expr }
    }

    fn at(&self, z: &[f64]) -> f64 {
        self.expr.eval(z).unwrap_or(f64::NAN)
    }
}

impl ScalarField for ExprField {
    fn label(&self) -> &str {
        &self.label
    }
    fn value(&self, z: &[f64]) -> f64 {
        self.at(z)
    }
    fn has_gradient(&self) -> bool {
        true
    }
    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let mut p = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * z[i].abs().max(1.0);
            p[i] = z[i] + h;
            let fp = self.at(&p);
            p[i] = z[i] - h;
            let fm = self.at(&p);
            p[i] = z[i];
            out[i] = (fp - fm) / (2.0 * h);
        }
    }
    fn has_hessian(&self) -> bool {
        true
    }
    fn hessian(&self, z: &[f64], out: &mut [f64]) {
        let d = z.len();
        let f0 = self.at(z);
        let mut p = z.to_vec();
        let step = |x: f64| 1e-4 * x.abs().max(1.0);
        for i in 0..d {
            let hi = step(z[i]);
            p[i] = z[i] + hi;
            let fp = self.at(&p);
            p[i] = z[i] - hi;
            let fm = self.at(&p);
            p[i] = z[i];
            out[i * d + i] = (fp - 2.0 * f0 + fm) / (hi * hi);
            for j in 0..i {
                let hj = step(z[j]);
                let mut s = 0.0;
                for (si, sj) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
                    p[i] = z[i] + si * hi;
                    p[j] = z[j] + sj * hj;
                    s += si * sj * self.at(&p);
                }
                p[i] = z[i];
                p[j] = z[j];
                let v = s / (4.0 * hi * hj);
                out[i * d + j] = v;
                out[j * d + i] = v;
            }
        }
    }
}
