//! Simulation and law-verification toolkit for degenerate SDEs
//!
//! ```text
//! dZ_t = A Z_t dt + b(Z_t) dt + B(Z_t) dW_t,
//! ```
//!
//! where noise and nonlinear drift act only on the first `d0` coordinates
//! and the linear drift `A` propagates them to the rest (hypoelliptic
//! structure).
//!
//! Modules:
//! - [`matcore`]: matrix exponentials, controllability Gramians, Kalman index, degenerate Gaussians.
//! - [`oukernel`]: exact analytics and sampling for the constant-coefficient (OU) case.
//! - [`sdesim`]: Euler–Maruyama, exponential Euler and dyadic frozen-coefficient schemes.
//! - [`localizer`]: covering atlases, cutoff models and truncation families.
//! - [`verifier`]: resolvent functionals, law comparison, martingale defect and analytic probes.
//! - [`models`]: coefficient expressions, builtin models and hypothesis checks.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the matrix formulas they implement.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod field;
pub mod localizer;
pub mod matcore;
pub mod models;
pub mod oukernel;
pub mod rng;
pub mod sdesim;
pub mod stats;
pub mod verifier;

pub use error::{Error, Result};
