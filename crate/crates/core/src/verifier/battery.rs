use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::field::{FieldRef, GaussianBump, PolyBump, Trig};

pub const BATTERY_VERSION: &str = "battery-v1";

/// Ordered, labelled test functions. Every member is bounded with a known
/// sup-norm and carries gradient and Hessian evaluators.
#[derive(Clone)]
pub struct FunctionBattery {
    pub version: String,
    members: Vec<FieldRef>,
}

impl std::fmt::Debug for FunctionBattery {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FunctionBattery").field("version", &self.version).field("labels", &self.labels()).finish()
    }
}

/// First `d` entries of `v`, padded with zeros.
fn fit(v: &[f64], d: usize) -> Vec<f64> {
    (0..d).map(|i| v.get(i).copied().unwrap_or(0.0)).collect()
}

impl FunctionBattery {
    pub fn new(version: impl Into<String>, members: Vec<FieldRef>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("battery must not be empty"));
        }
        for f in &members {
            if f.sup_norm().is_none() || !f.has_gradient() || !f.has_hessian() {
                return Err(Error::Capability(format!(
                    "battery member {} needs a known sup-norm, a gradient and a Hessian",
                    f.label()
                )));
            }
        }
        Ok(Self { version: version.into(), members })
    }

    /// The versioned six-member battery in dimension `d`: three Gaussian
    /// bumps, two compactly supported product bumps and one sine wave.
    pub fn default_for(d: usize) -> Self {
        let ones = vec![1.0; d];
        let members: Vec<FieldRef> = vec![
            Arc::new(GaussianBump::new("gauss-0", vec![0.0; d], 1.5, 1.0)),
            Arc::new(GaussianBump::new("gauss-1", ones.clone(), 1.0, 1.0)),
            Arc::new(GaussianBump::new("gauss-2", fit(&[-1.0, 2.0, 3.0], d), 2.0, 1.0)),
            Arc::new(PolyBump::new("bump-a", vec![0.0; d], 3.0, 1.0)),
            Arc::new(PolyBump::new("bump-b", ones, 2.0, 1.0)),
            Arc::new(Trig { omega: fit(&[0.7, -0.4, 0.3], d), phase: 0.5, amplitude: 1.0, label: "trig".into() }),
        ];
        Self { version: BATTERY_VERSION.into(), members }
    }

    pub fn members(&self) -> &[FieldRef] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn labels(&self) -> Vec<String> {
        self.members.iter().map(|f| f.label().to_string()).collect()
    }

    pub fn get(&self, label: &str) -> Option<&FieldRef> {
        self.members.iter().find(|f| f.label() == label)
    }

    /// Sub-battery in the given order; unknown labels are a lookup error.
    pub fn select(&self, labels: &[String]) -> Result<Self> {
        let members = labels
            .iter()
            .map(|l| {
                self.get(l).cloned().ok_or_else(|| Error::Lookup { name: l.clone(), available: self.labels() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.version.clone(), members)
    }
}
