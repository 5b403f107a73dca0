//! Optimal band policies for impulse control of one-dimensional diffusions.
//!
//! The value of an impulse control problem, read through the transform
//! `F = ψ/φ` built from the fundamental solutions of `(𝒜 − α)u = 0`, is a
//! straight line on the continuation region. [`solver`] finds that line by
//! maximising its slope over intervention targets; [`oracle`] and
//! [`simulate`] provide independent checks by value iteration and Monte Carlo.

pub mod checks;
pub mod error;
pub mod fundamentals;
pub mod model;
pub mod numerics;
pub mod oracle;
pub mod simulate;
pub mod solver;
pub mod transform;

pub use error::{ConfigError, ExprError, SolveError};
pub use model::{load_problem, parse_expr, Band, BandPolicy, Boundary, Expr, ImpulseProblem};
