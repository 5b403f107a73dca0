//! The transformed problem: resolvent `g`, shifted reward `K̄`, transformed
//! rewards `R(·, a)`, concavity and finiteness diagnostics, and the boundary
//! point `(F_lo, D)` every majorant passes through.

use crate::error::{Result, SolveError};
use crate::fundamentals::{classify, CatalogEntry, FundamentalPair};
use crate::model::ImpulseProblem;
use crate::numerics::{central_diff, central_diff2, gauss_legendre5, locate, quintic_hermite};

/// Number of cells used when the resolvent is tabulated.
const RESOLVENT_CELLS: usize = 2000;

/// Number of probes used for limits toward a boundary.
pub const LIMIT_PROBES: usize = 12;

/// Expected discounted running reward of the uncontrolled process.
#[derive(Debug, Clone)]
pub enum Resolvent {
    Zero,
    /// `f ≡ c₀` under discounting: `g = c₀/α`.
    Constant(f64),
    /// Constant-coefficient Brownian motion with `f = c₀ + c₁x + c₂x²`.
    BrownianQuadratic {
        c: [f64; 3],
        mu: f64,
        sigma: f64,
        alpha: f64,
    },
    /// OU process with `f = c₀ + c₁x`.
    OuAffine {
        c: [f64; 2],
        m: f64,
        delta: f64,
        alpha: f64,
    },
    /// Green's-function integral tabulated on a grid: `(g, g′, g″)` per node.
    Table {
        xs: Vec<f64>,
        vals: Vec<[f64; 3]>,
    },
}

impl Resolvent {
    /// Value and derivative at `x`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match self {
            Resolvent::Zero => (0.0, 0.0),
            Resolvent::Constant(v) => (*v, 0.0),
            Resolvent::BrownianQuadratic {
                c,
                mu,
                sigma,
                alpha,
            } => {
                let (a, m, s2) = (*alpha, *mu, sigma * sigma);
                let g = c[0] / a
                    + c[1] * (x / a + m / (a * a))
                    + c[2]
                        * (x * x / a
                            + 2.0 * x * m / (a * a)
                            + 2.0 * m * m / a.powi(3)
                            + s2 / (a * a));
                let dg = c[1] / a + c[2] * (2.0 * x / a + 2.0 * m / (a * a));
                (g, dg)
            }
            Resolvent::OuAffine { c, m, delta, alpha } => {
                let g = c[0] / alpha + c[1] * (m / alpha + (x - m) / (alpha + delta));
                (g, c[1] / (alpha + delta))
            }
            Resolvent::Table { xs, vals } => {
                let n = xs.len();
                if !(x >= xs[0] && x <= xs[n - 1]) {
                    return (f64::NAN, f64::NAN);
                }
                let i = locate(xs, x);
                quintic_hermite(xs[i], xs[i + 1], vals[i], vals[i + 1], x)
            }
        }
    }

    pub fn is_closed_form(&self) -> bool {
        !matches!(self, Resolvent::Table { .. })
    }
}

/// Fits `f` by a polynomial of degree ≤ `degree` from probes and checks it.
fn polynomial_fit(problem: &ImpulseProblem, degree: usize) -> Option<[f64; 3]> {
    let (f0, f1, fm) = (problem.f(0.0), problem.f(1.0), problem.f(-1.0));
    let c = [f0, 0.5 * (f1 - fm), 0.5 * (f1 + fm) - f0];
    if degree < 2 && c[2] != 0.0 {
        return None;
    }
    let probes = problem.diagnostic_grid();
    let ok = probes
        .iter()
        .step_by(16)
        .chain([2.5, -3.7].iter())
        .all(|&x| {
            let expected = c[0] + c[1] * x + c[2] * x * x;
            let scale = c[0].abs() + (c[1] * x).abs() + (c[2] * x * x).abs();
            (problem.f(x) - expected).abs() <= 1e-10 * (1.0 + scale)
        });
    ok.then_some(c)
}

/// Builds `g` in closed form when the running reward and diffusion allow it,
/// else tabulates the Green's-function integral on the truncated interval.
///
/// Closed forms are resolvents of the unkilled process; in absorbing mode the
/// tabulated version is the resolvent of the process killed at the left end.
/// The boundary pin `(P − g(lo))/φ(lo)` is consistent with either choice.
pub fn compute_g(problem: &ImpulseProblem, pair: &FundamentalPair, f_lo: f64) -> Result<Resolvent> {
    let d = &problem.diffusion;
    if problem.running.as_constant() == Some(0.0) {
        return Ok(Resolvent::Zero);
    }
    if !(d.alpha > 0.0) {
        return Err(SolveError::IllPosed(
            "a running reward needs a positive discount rate".into(),
        ));
    }
    if let Some(c0) = problem.running.as_constant() {
        return Ok(Resolvent::Constant(c0 / d.alpha));
    }
    let probes = problem.diagnostic_grid();
    match classify(d, &probes) {
        Some(CatalogEntry::Brownian { mu, sigma }) => {
            if let Some(c) = polynomial_fit(problem, 2) {
                return Ok(Resolvent::BrownianQuadratic {
                    c,
                    mu,
                    sigma,
                    alpha: d.alpha,
                });
            }
        }
        Some(CatalogEntry::OrnsteinUhlenbeck { delta, m, .. }) => {
            if let Some(c) = polynomial_fit(problem, 1) {
                return Ok(Resolvent::OuAffine {
                    c: [c[0], c[1]],
                    m,
                    delta,
                    alpha: d.alpha,
                });
            }
        }
        None => {}
    }
    tabulate_green(problem, pair, f_lo)
}

fn tabulate_green(
    problem: &ImpulseProblem,
    pair: &FundamentalPair,
    f_lo: f64,
) -> Result<Resolvent> {
    let d = &problem.diffusion;
    let (x_min, x_max) = problem.truncation();
    let n = RESOLVENT_CELLS;
    let xs: Vec<f64> = (0..=n)
        .map(|i| x_min + (x_max - x_min) * i as f64 / n as f64)
        .collect();
    // With an absorbing end the increasing solution is anchored to vanish there.
    let anchor = if d.is_absorbing() { f_lo } else { 0.0 };
    let weight = |t: f64| {
        let v = pair.values(t);
        let s = d.sigma(t);
        let rho = 2.0 / (s * s * v.wronskian());
        let big_psi = v.psi - anchor * v.phi;
        (big_psi * problem.f(t) * rho, v.phi * problem.f(t) * rho)
    };
    let mut lower = vec![0.0; n + 1];
    let mut upper = vec![0.0; n + 1];
    for i in 0..n {
        lower[i + 1] = lower[i] + gauss_legendre5(|t| weight(t).0, xs[i], xs[i + 1]);
    }
    for i in (0..n).rev() {
        upper[i] = upper[i + 1] + gauss_legendre5(|t| weight(t).1, xs[i], xs[i + 1]);
    }
    let mut vals = Vec::with_capacity(n + 1);
    for (i, &x) in xs.iter().enumerate() {
        let v = pair.values(x);
        let (bp, dbp) = (v.psi - anchor * v.phi, v.dpsi - anchor * v.dphi);
        let g = v.phi * lower[i] + bp * upper[i];
        let dg = v.dphi * lower[i] + dbp * upper[i];
        let s = d.sigma(x);
        let d2g = 2.0 * (d.alpha * g - d.mu(x) * dg - problem.f(x)) / (s * s);
        if !(g.is_finite() && dg.is_finite() && d2g.is_finite()) {
            return Err(SolveError::IllPosed(format!(
                "resolvent is not finite at x = {x}"
            )));
        }
        vals.push([g, dg, d2g]);
    }
    Ok(Resolvent::Table { xs, vals })
}

/// Sampled sign of `(𝒜 − α)h`, which is the sign of the second derivative of
/// `(h/φ)∘F⁻¹`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcavityProfile {
    pub xs: Vec<f64>,
    /// `-1` concave, `0` linear within tolerance, `+1` convex.
    pub signs: Vec<i8>,
    /// Midpoints between consecutive samples of opposite strict sign.
    pub changes: Vec<f64>,
}

/// Result of the finiteness diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Finiteness {
    /// Slopes stay bounded; `q` is the last estimate.
    Finite {
        q: f64,
        converged: bool,
    },
    Infinite,
}

impl Finiteness {
    pub fn is_finite(&self) -> bool {
        matches!(self, Finiteness::Finite { .. })
    }
}

/// Classifies a sequence of slope estimates taken along probes moving toward
/// the right boundary.
pub fn finiteness_from_slopes(slopes: &[f64]) -> Finiteness {
    let finite: Vec<f64> = slopes
        .iter()
        .copied()
        .take_while(|s| s.is_finite())
        .collect();
    if finite.len() < slopes.len() && finite.len() < 4 {
        return Finiteness::Infinite;
    }
    let n = finite.len();
    if n >= 4 {
        let growing = (n - 3..n).all(|i| {
            let (prev, cur) = (finite[i - 1].abs(), finite[i].abs());
            cur >= 10.0 * prev && cur > 1e-12
        });
        if growing {
            return Finiteness::Infinite;
        }
    }
    let Some(&q) = finite.last() else {
        return Finiteness::Infinite;
    };
    let converged = n >= 3 && (n - 3..n).all(|i| (finite[i] - q).abs() <= 1e-6 * q.abs().max(1.0));
    Finiteness::Finite { q, converged }
}

/// Problem data in transformed coordinates.
#[derive(Debug, Clone)]
pub struct TransformContext {
    pub problem: ImpulseProblem,
    pub pair: FundamentalPair,
    pub g: Resolvent,
    /// `F` at the left boundary (a limit for natural boundaries).
    pub f_lo: f64,
    /// Pinned transformed value at `F_lo`.
    pub d: f64,
    pub x_min: f64,
    pub x_max: f64,
}

impl TransformContext {
    pub fn new(problem: ImpulseProblem) -> Result<Self> {
        let pair = FundamentalPair::for_problem(&problem)?;
        Self::with_pair(problem, pair)
    }

    pub fn with_pair(problem: ImpulseProblem, pair: FundamentalPair) -> Result<Self> {
        let (x_min, x_max) = problem.truncation();
        let f_lo = left_transform_limit(&problem, &pair);
        let g = compute_g(&problem, &pair, f_lo)?;
        let mut ctx = TransformContext {
            problem,
            pair,
            g,
            f_lo,
            d: 0.0,
            x_min,
            x_max,
        };
        let (f_lo, d) = boundary_data(&ctx)?;
        ctx.f_lo = f_lo;
        ctx.d = d;
        Ok(ctx)
    }

    pub fn is_absorbing(&self) -> bool {
        self.problem.diffusion.is_absorbing()
    }

    pub fn alpha(&self) -> f64 {
        self.problem.diffusion.alpha
    }

    #[inline]
    pub fn g(&self, x: f64) -> f64 {
        self.g.eval(x).0
    }

    #[inline]
    pub fn dg(&self, x: f64) -> f64 {
        self.g.eval(x).1
    }

    /// `K̄(x, y) = K(x, y) − g(x) + g(y)`.
    #[inline]
    pub fn kbar(&self, x: f64, y: f64) -> f64 {
        self.problem.k(x, y) - self.g(x) + self.g(y)
    }

    /// Reward for stopping at `x` with target `a`: `K̄(x, a)` for a downward
    /// move, `K(x, x)` (a pure fixed cost) when `x ≤ a`.
    #[inline]
    pub fn reward(&self, x: f64, a: f64) -> f64 {
        if x > a {
            self.kbar(x, a)
        } else {
            self.problem.k(x, x)
        }
    }

    /// `∂K̄/∂x (x, a)` by central differences.
    pub fn reward_dx(&self, x: f64, a: f64) -> f64 {
        let dk = central_diff(|t| self.problem.k(t, a), x);
        dk - self.dg(x)
    }

    /// `Ψ = ψ − F_lo·φ = φ(F − F_lo)` and its derivative: the increasing
    /// solution vanishing at the transformed left end.
    #[inline]
    pub fn anchored(&self, x: f64) -> (f64, f64) {
        let v = self.pair.values(x);
        (v.psi - self.f_lo * v.phi, v.dpsi - self.f_lo * v.dphi)
    }

    /// The transformed line through `(F_lo, D)` with the given slope, mapped
    /// back: `φ(x)·W(F(x)) = βΨ(x) + Dφ(x)`.
    pub fn line_value(&self, beta: f64, x: f64) -> f64 {
        let v = self.pair.values(x);
        beta * (v.psi - self.f_lo * v.phi) + self.d * v.phi
    }

    /// `R(y, a) = reward(F⁻¹(y), a)/φ(F⁻¹(y))`, pinned to `D` at `F_lo` in
    /// absorbing mode.
    pub fn transformed_reward(&self, y: f64, a: f64) -> Result<f64> {
        if self.is_absorbing() && y == self.f_lo {
            return Ok(self.d);
        }
        let x = self.pair.f_inv(y)?;
        Ok(self.reward(x, a) / self.pair.phi(x))
    }

    /// Sign profile of `(𝒜 − α)h` on `xs`.
    pub fn concavity_profile<H: Fn(f64) -> f64>(&self, h: H, xs: &[f64]) -> ConcavityProfile {
        let d = &self.problem.diffusion;
        let signs: Vec<i8> = xs
            .iter()
            .map(|&x| {
                let h0 = h(x);
                let h1 = central_diff(&h, x);
                let h2 = central_diff2(&h, x);
                let s = d.sigma(x);
                let terms = [0.5 * s * s * h2, d.mu(x) * h1, -d.alpha * h0];
                let value: f64 = terms.iter().sum();
                let scale: f64 = terms.iter().map(|t| t.abs()).sum();
                if value.abs() <= 1e-6 * scale + 1e-12 {
                    0
                } else if value > 0.0 {
                    1
                } else {
                    -1
                }
            })
            .collect();
        let mut changes = Vec::new();
        let mut last: Option<(f64, i8)> = None;
        for (&x, &s) in xs.iter().zip(&signs) {
            if s == 0 {
                continue;
            }
            if let Some((px, ps)) = last {
                if ps != s {
                    changes.push(0.5 * (px + x));
                }
            }
            last = Some((x, s));
        }
        ConcavityProfile {
            xs: xs.to_vec(),
            signs,
            changes,
        }
    }

    /// Estimates the limiting slope of `(K̄(·, a)/φ)∘F⁻¹` toward the right
    /// boundary along probes `a + 2^k`.
    pub fn finiteness_check(&self, a: f64) -> Finiteness {
        let hi = self.pair.domain().1;
        let mut slopes = Vec::with_capacity(LIMIT_PROBES);
        for k in 0..LIMIT_PROBES {
            let x = a + (2.0f64).powi(k as i32);
            if x >= hi {
                break;
            }
            slopes.push(self.transformed_slope(x, a));
        }
        finiteness_from_slopes(&slopes)
    }

    /// `d/dy (K̄(·, a)/φ)∘F⁻¹` at `y = F(x)`, i.e. `(K̄′φ − K̄φ′)/(ψ′φ − ψφ′)`.
    pub fn transformed_slope(&self, x: f64, a: f64) -> f64 {
        let v = self.pair.values(x);
        let k = self.reward(x, a);
        let dk = self.reward_dx(x, a);
        (dk * v.phi - k * v.dphi) / v.wronskian()
    }
}

/// Limit of `F` at the left end of the pair's domain.
fn left_transform_limit(problem: &ImpulseProblem, pair: &FundamentalPair) -> f64 {
    let d = &problem.diffusion;
    let (dlo, _) = pair.domain();
    if d.is_absorbing() || dlo.is_finite() {
        let lo = if d.is_absorbing() {
            d.lo
        } else {
            dlo.max(problem.truncation().0)
        };
        return pair.f(lo);
    }
    let x_ref = problem.truncation().0.min(0.0);
    let mut f = pair.f(x_ref);
    for k in 0..LIMIT_PROBES {
        let next = pair.f(x_ref - (2.0f64).powi(k as i32 + 4));
        if !next.is_finite() {
            break;
        }
        f = next;
        if f <= 0.0 {
            f = 0.0;
            break;
        }
    }
    if f < 1e-300 {
        0.0
    } else {
        f
    }
}

/// The point `(F_lo, D)`: `(F(lo), (P − g(lo))/φ(lo))` with an absorbing left
/// end, `(F(lo+), l_lo)` with `l_lo = limsup K(x, x)⁺/φ(x)` otherwise.
pub fn boundary_data(ctx: &TransformContext) -> Result<(f64, f64)> {
    let problem = &ctx.problem;
    let d = &problem.diffusion;
    if d.is_absorbing() {
        let lo = d.lo;
        let phi = ctx.pair.phi(lo);
        let value = (d.penalty() - ctx.g(lo)) / phi;
        if !value.is_finite() {
            return Err(SolveError::DivergentBoundary);
        }
        return Ok((ctx.f_lo, value));
    }
    let (dlo, _) = ctx.pair.domain();
    let x_ref = ctx.x_min;
    let mut estimates = Vec::new();
    for k in 0..LIMIT_PROBES {
        let x = if dlo.is_finite() {
            dlo + (x_ref - dlo) * 0.5f64.powi(k as i32)
        } else {
            x_ref - (2.0f64).powi(k as i32)
        };
        let phi = ctx.pair.phi(x);
        let k_xx = problem.k(x, x);
        if !(phi.is_finite() && phi > 0.0) {
            break;
        }
        estimates.push(k_xx.max(0.0) / phi);
    }
    let limit = estimates
        .iter()
        .rev()
        .take(3)
        .fold(0.0f64, |m, &v| m.max(v));
    if !limit.is_finite() {
        return Err(SolveError::DivergentBoundary);
    }
    Ok((ctx.f_lo, limit))
}
