use serde::{Deserialize, Serialize};

use super::battery::FunctionBattery;
use super::resolvent::{battery_estimates, ResolventEstimate};
use crate::error::{invalid, Result};
use crate::sdesim::PathEnsemble;

pub const Z_CRIT: f64 = 4.0;
pub const CSV_HEADER: &str = "f_id,lambda,valueA,stderrA,valueB,stderrB,zscore,verdict";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub f_id: String,
    pub lambda: f64,
    pub a: ResolventEstimate,
    pub b: ResolventEstimate,
    pub zscore: f64,
    pub passed: bool,
}

/// Paired resolvent estimates of two laws; passes when every `|z| ≤ z_crit`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LawComparison {
    pub battery_version: String,
    pub battery: Vec<String>,
    pub lambda_grid: Vec<f64>,
    pub z_crit: f64,
    pub pairs: Vec<ComparisonRow>,
    pub passed: bool,
    pub max_abs_z: f64,
    pub caveat: Option<String>,
}

impl LawComparison {
    /// Pair estimates produced in the same (member, λ) order.
    pub fn from_estimates(
        battery: &FunctionBattery,
        lambda_grid: &[f64],
        a: Vec<ResolventEstimate>,
        b: Vec<ResolventEstimate>,
        z_crit: f64,
    ) -> Result<Self> {
        if a.len() != b.len() || a.len() != battery.len() * lambda_grid.len() {
            return Err(invalid("estimate lists do not match the battery and lambda grid"));
        }
        if !(z_crit > 0.0) {
            return Err(invalid("z_crit must be positive"));
        }
        if a.first().map(|e| &e.z0) != b.first().map(|e| &e.z0) {
            return Err(invalid("compared laws must start from the same point"));
        }
        let pairs: Vec<ComparisonRow> = a
            .into_iter()
            .zip(b)
            .map(|(a, b)| {
                let z = a.z_score(&b);
                ComparisonRow { f_id: a.f_id.clone(), lambda: a.lambda, zscore: z, passed: z.abs() <= z_crit, a, b }
            })
            .collect();
        let max_abs_z = pairs.iter().map(|r| r.zscore.abs()).fold(0.0, f64::max);
        let passed = pairs.iter().all(|r| r.passed);
        let caveat = (pairs.first().is_some_and(|r| r.a.scheme_tag != r.b.scheme_tag)).then(|| {
            "different schemes: each estimate carries its own discretisation bias, which the z-scores do not model".to_string()
        });
        Ok(Self {
            battery_version: battery.version.clone(),
            battery: battery.labels(),
            lambda_grid: lambda_grid.to_vec(),
            z_crit,
            pairs,
            passed,
            max_abs_z,
            caveat,
        })
    }

    pub fn failures(&self) -> Vec<&ComparisonRow> {
        self.pairs.iter().filter(|r| !r.passed).collect()
    }

    /// One row per (member, λ); floats in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.pairs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.f_id,
                r.lambda,
                r.a.value,
                r.a.stderr,
                r.b.value,
                r.b.stderr,
                r.zscore,
                if r.passed { "pass" } else { "fail" }
            ));
        }
        s
    }
}

pub fn compare_laws(
    ens_a: &PathEnsemble,
    ens_b: &PathEnsemble,
    battery: &FunctionBattery,
    lambda_grid: &[f64],
) -> Result<LawComparison> {
    compare_laws_with(ens_a, ens_b, battery, lambda_grid, Z_CRIT)
}

pub fn compare_laws_with(
    ens_a: &PathEnsemble,
    ens_b: &PathEnsemble,
    battery: &FunctionBattery,
    lambda_grid: &[f64],
    z_crit: f64,
) -> Result<LawComparison> {
    if ens_a.z0 != ens_b.z0 {
        return Err(invalid("ensembles start from different points"));
    }
    let (ta, tb) = (ens_a.horizon(), ens_b.horizon());
    if (ta - tb).abs() > 1e-12 * ta.abs().max(1.0) {
        return Err(invalid(format!("ensembles have different horizons ({ta} vs {tb})")));
    }
    if ens_a.seed == ens_b.seed {
        return Err(invalid("compared ensembles must use independent seeds"));
    }
    let a = battery_estimates(ens_a, battery, lambda_grid)?;
    let b = battery_estimates(ens_b, battery, lambda_grid)?;
    let mut cmp = LawComparison::from_estimates(battery, lambda_grid, a, b, z_crit)?;
    if ens_a.step != ens_b.step {
        let note = format!("step sizes differ ({} vs {}); systematic bias is not part of the z-score", ens_a.step, ens_b.step);
        cmp.caveat = Some(match cmp.caveat {
            Some(c) => format!("{c}; {note}"),
            None => note,
        });
    }
    Ok(cmp)
}
