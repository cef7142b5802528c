//! Matched asymptotic construction and verification for interior transition
//! layers of `-ε² u'' + b(x, u) = 0` on (0, 1).
// `!(a > b)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corrections;
pub mod expansion;
pub mod expr;
pub mod grid;
pub mod par;
pub mod kink;
pub mod locator;
pub mod problem;
pub mod solver;
pub mod verify;
mod quad;

pub use expr::{parse, Expr, Var};
pub use problem::{check_assumptions, load_problem, resolve_problem, AssumptionReport, ProblemSpec};
