//! Fundamental solutions `ψ` (increasing) and `φ` (decreasing) of
//! `(σ²/2)u″ + μu′ − αu = 0`, and the transform `F = ψ/φ`.

mod numeric;
mod special;

use serde::Serialize;

pub use special::{hermite_fn, parabolic_cylinder};

use crate::error::{Result, SolveError};
use crate::model::{DiffusionSpec, ImpulseProblem, PairChoice};
use crate::numerics::brent_root;
use numeric::Table;

/// Default local error tolerance of the numeric construction.
pub const NUMERIC_TOL: f64 = 1e-10;

/// How a fundamental pair was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    AnalyticBm,
    AnalyticOu,
    Numeric,
}

/// `ψ`, `φ` and their first derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairValues {
    pub psi: f64,
    pub phi: f64,
    pub dpsi: f64,
    pub dphi: f64,
}

impl PairValues {
    /// `ψ′φ − ψφ′`, positive for a valid pair.
    #[inline]
    pub fn wronskian(&self) -> f64 {
        self.dpsi * self.phi - self.psi * self.dphi
    }

    #[inline]
    pub fn f(&self) -> f64 {
        self.psi / self.phi
    }

    #[inline]
    pub fn df(&self) -> f64 {
        self.wronskian() / (self.phi * self.phi)
    }
}

#[derive(Debug, Clone)]
enum Kind {
    /// `ψ = exp(λ₊(x − c))`, `φ = exp(λ₋(x − c))`.
    Exponential {
        lp: f64,
        lm: f64,
        c: f64,
    },
    /// `α = 0`, `μ = 0`: `ψ = x − lo`, `φ = 1`.
    Linear {
        lo: f64,
    },
    /// `α = 0`, constant `μ ≠ 0`: `ψ = (1 − exp(−κ(x − lo)))/κ`, `φ = 1`.
    Scale {
        lo: f64,
        kappa: f64,
    },
    /// Ornstein–Uhlenbeck with mean reversion `delta` to `m`; Hermite
    /// functions of order `nu = −α/δ`.
    Ou {
        m: f64,
        sigma: f64,
        delta: f64,
        nu: f64,
        prefactor: f64,
    },
    Numeric {
        psi: Table,
        phi: Option<Table>,
    },
}

/// An increasing/decreasing pair of positive solutions with the transform
/// `F = ψ/φ` and its inverse.
#[derive(Debug, Clone)]
pub struct FundamentalPair {
    kind: Kind,
    provenance: Provenance,
    normalization: f64,
    domain: (f64, f64),
}

/// Parameters of a diffusion recognised by the analytic catalog.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CatalogEntry {
    /// Constant drift and volatility.
    Brownian { mu: f64, sigma: f64 },
    /// `μ(x) = δ(m − x)`, constant volatility.
    OrnsteinUhlenbeck { delta: f64, m: f64, sigma: f64 },
}

/// Recognises Brownian motion with constant coefficients and OU processes by
/// probing the drift and volatility expressions.
pub fn classify(spec: &DiffusionSpec, probes: &[f64]) -> Option<CatalogEntry> {
    let sigma = spec.vol.as_constant()?;
    if let Some(mu) = spec.drift.as_constant() {
        return Some(CatalogEntry::Brownian { mu, sigma });
    }
    let (x0, x1) = (0.0, 1.0);
    let slope = spec.mu(x1) - spec.mu(x0);
    let intercept = spec.mu(x0);
    if !(slope < 0.0) {
        return None;
    }
    let affine = probes.iter().all(|&x| {
        let expected = intercept + slope * x;
        (spec.mu(x) - expected).abs() <= 1e-12 * (1.0 + expected.abs() + (slope * x).abs())
    });
    if !affine {
        return None;
    }
    let delta = -slope;
    Some(CatalogEntry::OrnsteinUhlenbeck {
        delta,
        m: intercept / delta,
        sigma,
    })
}

/// Closed-form pair for catalog diffusions.
///
/// Brownian motion with `α > 0` uses `ψ = exp(λ₊(x − c))`, `φ = exp(λ₋(x − c))`,
/// normalised at `c`. With `α = 0` the pair is `(scale function − its value at lo, 1)`
/// and requires a finite left end. OU uses
/// `ψ(x) = 2^(−ν/2) 𝓗_ν(−z√δ)`, `φ(x) = 2^(−ν/2) 𝓗_ν(z√δ)` with `z = (x − m)/σ`
/// and `ν = −α/δ`, without renormalisation.
pub fn analytic_fundamentals(spec: &DiffusionSpec, c: f64) -> Result<FundamentalPair> {
    let probes: Vec<f64> = (0..16).map(|i| -4.0 + 0.6 * i as f64).collect();
    let entry = classify(spec, &probes).ok_or(SolveError::NotInCatalog)?;
    let alpha = spec.alpha;
    let domain = (spec.lo, spec.hi);
    let (kind, provenance, normalization) = match entry {
        CatalogEntry::Brownian { mu, sigma } => {
            let s2 = sigma * sigma;
            if alpha > 0.0 {
                let disc = (mu * mu + 2.0 * alpha * s2).sqrt();
                let kind = Kind::Exponential {
                    lp: (-mu + disc) / s2,
                    lm: (-mu - disc) / s2,
                    c,
                };
                (kind, Provenance::AnalyticBm, c)
            } else {
                if !spec.lo.is_finite() || !spec.is_absorbing() {
                    return Err(SolveError::IllPosed(
                        "undiscounted problems need an absorbing finite left end".into(),
                    ));
                }
                let kind = if mu == 0.0 {
                    Kind::Linear { lo: spec.lo }
                } else {
                    Kind::Scale {
                        lo: spec.lo,
                        kappa: 2.0 * mu / s2,
                    }
                };
                (kind, Provenance::AnalyticBm, spec.lo)
            }
        }
        CatalogEntry::OrnsteinUhlenbeck { delta, m, sigma } => {
            if !(alpha > 0.0) {
                return Err(SolveError::NotInCatalog);
            }
            let nu = -alpha / delta;
            let kind = Kind::Ou {
                m,
                sigma,
                delta,
                nu,
                prefactor: (-0.5 * nu * std::f64::consts::LN_2).exp(),
            };
            (kind, Provenance::AnalyticOu, m)
        }
    };
    Ok(FundamentalPair {
        kind,
        provenance,
        normalization,
        domain,
    })
}

/// Pair built by integrating the ODE on `[x_min, x_max]`, normalised so that
/// `ψ(c) = φ(c) = 1`. With an absorbing left end `ψ` vanishes at `x_min`.
pub fn numeric_fundamentals(
    spec: &DiffusionSpec,
    x_min: f64,
    x_max: f64,
    c: f64,
    tol: f64,
) -> Result<FundamentalPair> {
    if !(c > x_min && c < x_max) {
        return Err(SolveError::Shooting(format!(
            "normalisation point {c} outside ({x_min}, {x_max})"
        )));
    }
    let absorbing = spec.is_absorbing() && spec.lo == x_min;
    if spec.alpha == 0.0 && !absorbing {
        return Err(SolveError::IllPosed(
            "undiscounted problems need an absorbing finite left end".into(),
        ));
    }
    let psi = numeric::increasing_solution(spec, x_min, x_max, c, tol, absorbing)?;
    let phi = if spec.alpha == 0.0 {
        None
    } else {
        Some(numeric::decreasing_solution(spec, x_min, x_max, c, tol)?)
    };
    Ok(FundamentalPair {
        kind: Kind::Numeric { psi, phi },
        provenance: Provenance::Numeric,
        normalization: c,
        domain: (x_min, x_max),
    })
}

impl FundamentalPair {
    /// Picks the analytic pair when available (unless the problem asks for
    /// the numeric one), else integrates on the truncated interval.
    pub fn for_problem(problem: &ImpulseProblem) -> Result<Self> {
        let (x_min, x_max) = problem.truncation();
        let c = problem
            .settings
            .normalization_point
            .unwrap_or(0.5 * (x_min + x_max));
        if problem.settings.pair == PairChoice::Auto {
            match analytic_fundamentals(&problem.diffusion, c) {
                Ok(pair) => return Ok(pair),
                Err(SolveError::NotInCatalog) => {}
                Err(e) => return Err(e),
            }
        }
        numeric_fundamentals(&problem.diffusion, x_min, x_max, c, NUMERIC_TOL)
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn normalization_point(&self) -> f64 {
        self.normalization
    }

    /// Interval on which the pair can be evaluated.
    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// `ψ`, `φ`, `ψ′`, `φ′` at `x`.
    pub fn values(&self, x: f64) -> PairValues {
        match &self.kind {
            Kind::Exponential { lp, lm, c } => {
                let psi = (lp * (x - c)).exp();
                let phi = (lm * (x - c)).exp();
                PairValues {
                    psi,
                    phi,
                    dpsi: lp * psi,
                    dphi: lm * phi,
                }
            }
            Kind::Linear { lo } => PairValues {
                psi: x - lo,
                phi: 1.0,
                dpsi: 1.0,
                dphi: 0.0,
            },
            Kind::Scale { lo, kappa } => {
                let e = (-kappa * (x - lo)).exp();
                PairValues {
                    psi: (1.0 - e) / kappa,
                    phi: 1.0,
                    dpsi: e,
                    dphi: 0.0,
                }
            }
            Kind::Ou {
                m,
                sigma,
                delta,
                nu,
                prefactor,
            } => {
                let rd = delta.sqrt();
                let s = (x - m) / sigma * rd;
                let h = |order: f64, arg: f64| hermite_fn(order, arg).unwrap_or(f64::NAN);
                let psi = prefactor * h(*nu, -s);
                let phi = prefactor * h(*nu, s);
                let dpsi = prefactor * 2.0 * nu * h(nu - 1.0, -s) * (-rd / sigma);
                let dphi = prefactor * 2.0 * nu * h(nu - 1.0, s) * (rd / sigma);
                PairValues {
                    psi,
                    phi,
                    dpsi,
                    dphi,
                }
            }
            Kind::Numeric { psi, phi } => {
                let (p, dp) = psi.eval(x);
                let (q, dq) = phi.as_ref().map_or((1.0, 0.0), |t| t.eval(x));
                PairValues {
                    psi: p,
                    phi: q,
                    dpsi: dp,
                    dphi: dq,
                }
            }
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Ou {
                m,
                sigma,
                delta,
                nu,
                prefactor,
            } => prefactor * hermite_fn(*nu, -(x - m) / sigma * delta.sqrt()).unwrap_or(f64::NAN),
            _ => self.values(x).psi,
        }
    }

    pub fn phi(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Ou {
                m,
                sigma,
                delta,
                nu,
                prefactor,
            } => prefactor * hermite_fn(*nu, (x - m) / sigma * delta.sqrt()).unwrap_or(f64::NAN),
            Kind::Linear { .. } | Kind::Scale { .. } => 1.0,
            _ => self.values(x).phi,
        }
    }

    /// The transform `F = ψ/φ`.
    pub fn f(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Exponential { lp, lm, c } => ((lp - lm) * (x - c)).exp(),
            Kind::Linear { lo } => x - lo,
            Kind::Ou { .. } => self.psi(x) / self.phi(x),
            _ => {
                let v = self.values(x);
                v.psi / v.phi
            }
        }
    }

    /// `F′ = (ψ′φ − ψφ′)/φ²`.
    pub fn df(&self, x: f64) -> f64 {
        self.values(x).df()
    }

    /// Inverse transform. Errors when `y` is outside the range of `F` on the domain.
    pub fn f_inv(&self, y: f64) -> Result<f64> {
        match &self.kind {
            Kind::Exponential { lp, lm, c } => {
                if y > 0.0 {
                    Ok(c + y.ln() / (lp - lm))
                } else {
                    Err(SolveError::OutOfRange {
                        y,
                        lo: 0.0,
                        hi: f64::INFINITY,
                    })
                }
            }
            Kind::Linear { lo } if y >= 0.0 => Ok(lo + y),
            Kind::Scale { lo, kappa } if y >= 0.0 && kappa * y < 1.0 => {
                Ok(lo - (1.0 - kappa * y).ln() / kappa)
            }
            Kind::Linear { .. } | Kind::Scale { .. } => Err(SolveError::OutOfRange {
                y,
                lo: 0.0,
                hi: f64::INFINITY,
            }),
            _ => self.numeric_inverse(y),
        }
    }

    fn numeric_inverse(&self, y: f64) -> Result<f64> {
        let (mut lo, mut hi) = match &self.kind {
            Kind::Numeric { .. } => self.domain,
            _ => {
                // Expand a bracket outward from the normalisation point.
                let c = self.normalization;
                let (dlo, dhi) = self.domain;
                let mut width = 1.0;
                let (mut a, mut b) = ((c - width).max(dlo), (c + width).min(dhi));
                while self.f(a) > y && a > dlo {
                    width *= 2.0;
                    a = (c - width).max(dlo);
                    if width > 1e6 {
                        break;
                    }
                }
                width = 1.0;
                while self.f(b) < y && b < dhi {
                    width *= 2.0;
                    b = (c + width).min(dhi);
                    if width > 1e6 {
                        break;
                    }
                }
                (a, b)
            }
        };
        let (f_lo, f_hi) = (self.f(lo), self.f(hi));
        if !(y >= f_lo && y <= f_hi) {
            return Err(SolveError::OutOfRange {
                y,
                lo: f_lo,
                hi: f_hi,
            });
        }
        if y == f_lo {
            return Ok(lo);
        }
        if y == f_hi {
            return Ok(hi);
        }
        let use_log = f_lo > 0.0;
        let target = if use_log { y.ln() } else { y };
        let g = |x: f64| {
            let v = self.f(x);
            if use_log {
                v.ln() - target
            } else {
                v - target
            }
        };
        // Shrink the bracket geometrically first so Brent starts close.
        for _ in 0..4 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        brent_root(g, lo, hi, 1e-12, 200)
    }

    /// Second derivative of a fundamental solution from the ODE.
    pub fn second_derivative(spec: &DiffusionSpec, x: f64, u: f64, du: f64) -> f64 {
        let s = spec.sigma(x);
        2.0 * (spec.alpha * u - spec.mu(x) * du) / (s * s)
    }
}
