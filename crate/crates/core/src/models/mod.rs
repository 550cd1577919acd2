//! Model registry: coefficient expressions, the JSON model format, builtin
//! models and sampled hypothesis checks.

mod builtin;
pub mod expr;
mod spec;
mod validate;

pub use builtin::{builtin, builtin_model, builtin_with, load_model, BuiltinOptions, BUILTIN_NAMES, PAPER_EX1_C};
pub use expr::{parse_coeff_expr, CoeffExpr, ExprError};
pub use spec::{CompiledSpec, ExprField, ModelSpec};
pub use validate::{validate, HypothesisReport, LyapunovCheck, OscillationRow, Violation};
pub(crate) use validate::uniform_in_ball;

#[cfg(test)]
mod tests;
