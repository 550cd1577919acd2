//! Path simulation for `dZ = AZ dt + lift(b₀(Z)) dt + lift(B₀(Z)) dW`.
//!
//! Three schemes share one per-path kernel: Euler–Maruyama, exponential
//! Euler (exact OU step with coefficients frozen at the left endpoint) and
//! the dyadic frozen-coefficient scheme. Every path owns a random stream
//! keyed by `(seed, path index)`.

mod ensemble;
mod model;
mod monitor;
mod schemes;

pub use ensemble::{Ball, PathEnsemble};
pub use model::{CoeffFn, CoeffResult, Drift, Lyapunov, Noise, SdeModel};
pub(crate) use model::GeneratorScratch;
pub use monitor::{exit_prob_curve, lyapunov_monitor, ExitCurve, LyapunovReport};
pub use schemes::{
    euler_coupled, euler_maruyama, exp_euler, exp_euler_step_covariance, frozen_dyadic_scheme, simulate, simulate_range,
    Scheme, SimConfig, DIVERGENCE_CAP,
};
