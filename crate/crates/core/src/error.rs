use thiserror::Error;

/// Errors raised while parsing or evaluating user expressions.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at position {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("{func} of non-positive value {value}")]
    Domain { func: &'static str, value: f64 },
    #[error("expression expects {expected} variable(s), got {got}")]
    Arity { expected: usize, got: usize },
}

/// Errors raised while loading and validating a problem description.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("missing field `{0}`")]
    MissingField(String),
    #[error("invalid value for `{field}`: {msg}")]
    InvalidValue { field: String, msg: String },
    #[error("in `{field}`: {source}")]
    Expr {
        field: String,
        #[source]
        source: ExprError,
    },
    #[error("{what} violated at x = {x}: {detail}")]
    Invariant {
        what: &'static str,
        x: f64,
        detail: String,
    },
}

/// Errors from the numerical layers (fundamentals, transform, solver, oracle).
#[derive(Debug, Error)]
pub enum SolveError {
    #[error("diffusion does not match an analytic catalog entry")]
    NotInCatalog,
    #[error("order must be negative, got {0}")]
    NonNegativeOrder(f64),
    #[error("quadrature did not converge (estimate {estimate}, error {error})")]
    Quadrature { estimate: f64, error: f64 },
    #[error("shooting failed: {0}")]
    Shooting(String),
    #[error("value {y} outside the range of F on [{lo}, {hi}]")]
    OutOfRange { y: f64, lo: f64, hi: f64 },
    #[error("root bracket [{a}, {b}] does not straddle a sign change")]
    NoBracket { a: f64, b: f64 },
    #[error("no tangency point for target a = {a} inside the truncated domain")]
    NoTangency { a: f64 },
    #[error("boundary value estimate diverges near the left boundary")]
    DivergentBoundary,
    #[error("value iteration did not converge in {iterations} iterations (last change {change})")]
    NoConvergence { iterations: usize, change: f64 },
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Result<T, E = SolveError> = std::result::Result<T, E>;
