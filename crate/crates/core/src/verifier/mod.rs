//! Statistical verification over simulated laws: resolvent functionals,
//! paired law comparison on a fixed function battery, martingale-defect
//! statistics and numerical probes of resolvent estimates for OU models.

mod battery;
mod compare;
mod defect;
mod probes;
mod resolvent;

pub use battery::{FunctionBattery, BATTERY_VERSION};
pub use compare::{compare_laws, compare_laws_with, ComparisonRow, LawComparison, CSV_HEADER, Z_CRIT};
pub use defect::{
    defect_ratio, martingale_defect, resolvent_identity_check, DefectEstimate, DefectRatio, ResolventIdentity, WindowMark,
};
pub use probes::{integrability_threshold, probe_second_derivative, probe_sup_lp, HessianProbe, SupLpProbe, ZGrid};
pub use resolvent::{
    battery_estimates, resolvent_functional, resolvent_samples, simulate_battery, BatteryAccumulator, ResolventEstimate,
    DEFAULT_LAMBDA_GRID,
};

#[cfg(test)]
mod tests;
