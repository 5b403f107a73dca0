//! Problem description: diffusions, rewards, solver settings and band policies.

mod config;
mod expr;

use serde::{Deserialize, Serialize};

pub use config::load_problem;
pub use expr::{parse_expr, Expr};

use crate::error::ConfigError;

/// Number of points in the grid used to validate problem invariants.
pub const DIAGNOSTIC_POINTS: usize = 256;

/// Default truncation of an infinite end of the state interval.
pub const DEFAULT_TRUNCATION: f64 = 20.0;

/// Behaviour of the diffusion at the left end of its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Boundary {
    Natural,
    /// Absorbed at `lo`, collecting `penalty` (≤ 0) on ruin.
    Absorbing {
        penalty: f64,
    },
}

/// Uncontrolled dynamics `dX = μ(X)dt + σ(X)dW`, discounted at rate `alpha`.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub drift: Expr,
    pub vol: Expr,
    pub alpha: f64,
    pub lo: f64,
    pub hi: f64,
    pub boundary: Boundary,
}

impl DiffusionSpec {
    pub fn is_absorbing(&self) -> bool {
        matches!(self.boundary, Boundary::Absorbing { .. })
    }

    pub fn penalty(&self) -> f64 {
        match self.boundary {
            Boundary::Absorbing { penalty } => penalty,
            Boundary::Natural => 0.0,
        }
    }

    #[inline]
    pub fn mu(&self, x: f64) -> f64 {
        self.drift.eval1(x).unwrap_or(f64::NAN)
    }

    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.vol.eval1(x).unwrap_or(f64::NAN)
    }
}

/// Which fundamental pair construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairChoice {
    /// Closed form when the diffusion is in the catalog, numeric otherwise.
    #[default]
    Auto,
    Numeric,
}

/// Tunable numerical settings; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    /// Left truncation point used when `lo` is infinite.
    pub x_min: Option<f64>,
    /// Right truncation point used when `hi` is infinite.
    pub x_max: Option<f64>,
    /// Normalisation point of numerically constructed fundamental pairs.
    pub normalization_point: Option<f64>,
    pub pair: PairChoice,
    /// Number of targets in the slope scan.
    pub scan_points: usize,
    /// Number of points in the coarse search for a tangency.
    pub tangency_points: usize,
    pub oracle_nodes: usize,
    pub oracle_max_iter: usize,
    pub oracle_tol: f64,
    /// Right end of the value-iteration grid; defaults to the truncation point.
    pub oracle_hi: Option<f64>,
    /// Direction of admissible impulses; only `"down"` is supported.
    pub direction: String,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            x_min: None,
            x_max: None,
            normalization_point: None,
            pair: PairChoice::Auto,
            scan_points: 200,
            tangency_points: 400,
            oracle_nodes: 2000,
            oracle_max_iter: 500,
            oracle_tol: 1e-6,
            oracle_hi: None,
            direction: "down".into(),
        }
    }
}

/// A fully validated impulse control problem.
#[derive(Debug, Clone)]
pub struct ImpulseProblem {
    pub diffusion: DiffusionSpec,
    /// Running reward `f(x)`.
    pub running: Expr,
    /// Intervention reward `K(x, y)` for a move from `x` down to `y`.
    pub intervention: Expr,
    pub settings: SolverSettings,
}

impl ImpulseProblem {
    /// Builds a problem and checks its invariants on the diagnostic grid.
    pub fn new(
        diffusion: DiffusionSpec,
        running: Expr,
        intervention: Expr,
        settings: SolverSettings,
    ) -> Result<Self, ConfigError> {
        let problem = ImpulseProblem {
            diffusion,
            running,
            intervention,
            settings,
        };
        problem.validate()?;
        Ok(problem)
    }

    /// Finite interval `[x_min, x_max]` the numerics work on.
    pub fn truncation(&self) -> (f64, f64) {
        let d = &self.diffusion;
        let x_min = if d.lo.is_finite() {
            d.lo
        } else {
            self.settings.x_min.unwrap_or(-DEFAULT_TRUNCATION)
        };
        let x_max = if d.hi.is_finite() {
            d.hi
        } else {
            self.settings.x_max.unwrap_or(DEFAULT_TRUNCATION)
        };
        (x_min, x_max)
    }

    /// Interior points of the truncated interval used for invariant checks.
    pub fn diagnostic_grid(&self) -> Vec<f64> {
        let (x_min, x_max) = self.truncation();
        let h = (x_max - x_min) / DIAGNOSTIC_POINTS as f64;
        (0..DIAGNOSTIC_POINTS)
            .map(|i| x_min + (i as f64 + 0.5) * h)
            .collect()
    }

    #[inline]
    pub fn f(&self, x: f64) -> f64 {
        self.running.eval1(x).unwrap_or(f64::NAN)
    }

    #[inline]
    pub fn k(&self, x: f64, y: f64) -> f64 {
        self.intervention.eval2(x, y).unwrap_or(f64::NAN)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.diffusion;
        let invalid = |field: &str, msg: String| ConfigError::InvalidValue {
            field: field.into(),
            msg,
        };
        if !(d.alpha >= 0.0 && d.alpha.is_finite()) {
            return Err(invalid(
                "alpha",
                format!("must be finite and >= 0, got {}", d.alpha),
            ));
        }
        if !(d.lo < d.hi) {
            return Err(invalid(
                "lo",
                format!("need lo < hi, got [{}, {}]", d.lo, d.hi),
            ));
        }
        match d.boundary {
            Boundary::Absorbing { penalty } => {
                if !d.lo.is_finite() {
                    return Err(invalid("lo", "absorbing boundary needs a finite lo".into()));
                }
                if !(penalty <= 0.0) {
                    return Err(invalid("penalty", format!("must be <= 0, got {penalty}")));
                }
            }
            Boundary::Natural => {}
        }
        if self.settings.direction != "down" {
            return Err(invalid(
                "direction",
                format!(
                    "only downward impulses are supported, got `{}`",
                    self.settings.direction
                ),
            ));
        }
        let (x_min, x_max) = self.truncation();
        if !(x_min < x_max) {
            return Err(invalid(
                "x_min",
                format!("empty truncated interval [{x_min}, {x_max}]"),
            ));
        }
        if let Some(c) = self.settings.normalization_point {
            if !(c > x_min && c < x_max) {
                return Err(invalid(
                    "normalization_point",
                    format!("{c} is not inside ({x_min}, {x_max})"),
                ));
            }
        }
        if let Some(h) = self.settings.oracle_hi {
            if !(h > x_min && h <= x_max) {
                return Err(invalid(
                    "oracle_hi",
                    format!("{h} is not inside ({x_min}, {x_max}]"),
                ));
            }
        }
        let s = &self.settings;
        if s.scan_points < 8 || s.tangency_points < 16 || s.oracle_nodes < 16 {
            return Err(invalid(
                "solver",
                "scan_points >= 8, tangency_points >= 16 and oracle_nodes >= 16 required".into(),
            ));
        }
        if !(s.oracle_tol > 0.0) {
            return Err(invalid("oracle_tol", "must be positive".into()));
        }
        for x in self.diagnostic_grid() {
            let sigma = d.vol.eval1(x).map_err(|e| ConfigError::Invariant {
                what: "volatility evaluation",
                x,
                detail: e.to_string(),
            })?;
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(ConfigError::Invariant {
                    what: "positive volatility",
                    x,
                    detail: format!("sigma(x) = {sigma}"),
                });
            }
            let mu = d.drift.eval1(x).map_err(|e| ConfigError::Invariant {
                what: "drift evaluation",
                x,
                detail: e.to_string(),
            })?;
            if !mu.is_finite() {
                return Err(ConfigError::Invariant {
                    what: "finite drift",
                    x,
                    detail: format!("mu(x) = {mu}"),
                });
            }
            let f = self.running.eval1(x).map_err(|e| ConfigError::Invariant {
                what: "running reward evaluation",
                x,
                detail: e.to_string(),
            })?;
            if !f.is_finite() {
                return Err(ConfigError::Invariant {
                    what: "finite running reward",
                    x,
                    detail: format!("f(x) = {f}"),
                });
            }
            let kxx = self
                .intervention
                .eval2(x, x)
                .map_err(|e| ConfigError::Invariant {
                    what: "intervention reward evaluation",
                    x,
                    detail: e.to_string(),
                })?;
            if !(kxx < 0.0) {
                return Err(ConfigError::Invariant {
                    what: "fixed-cost condition K(x,x) < 0",
                    x,
                    detail: format!("K(x,x) = {kxx}"),
                });
            }
        }
        Ok(())
    }
}

/// One band of an impulse policy: when the state reaches `b`, move it to `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub a: f64,
    pub b: f64,
}

/// A band policy together with its transformed-space line `W(y) = β(y − F_lo) + D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPolicy {
    pub bands: Vec<Band>,
    pub beta: f64,
    /// Value of the transformed line at the left boundary.
    pub intercept: f64,
    /// Transform value at the left boundary.
    pub f_lo: f64,
}

impl BandPolicy {
    /// The policy that never intervenes.
    pub fn empty(f_lo: f64, intercept: f64) -> Self {
        BandPolicy {
            bands: Vec::new(),
            beta: 0.0,
            intercept,
            f_lo,
        }
    }

    /// Policy with the given bands and no transformed-space data, as used
    /// when simulating an arbitrary band.
    pub fn from_bands(bands: Vec<Band>) -> Self {
        BandPolicy {
            bands,
            beta: f64::NAN,
            intercept: f64::NAN,
            f_lo: f64::NAN,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    /// The point `(F_lo, D)` every majorant passes through.
    pub fn fixed_point(&self) -> (f64, f64) {
        (self.f_lo, self.intercept)
    }

    /// Checks `lo < a_k < b_k <= a_{k+1}`.
    pub fn check_ordering(&self, lo: f64) -> Result<(), String> {
        let mut prev = lo;
        for (k, band) in self.bands.iter().enumerate() {
            if !(band.a > prev || (k > 0 && band.a >= prev)) || !(band.a < band.b) {
                return Err(format!(
                    "band {k} ({}, {}) is out of order after {prev}",
                    band.a, band.b
                ));
            }
            prev = band.b;
        }
        Ok(())
    }
}
