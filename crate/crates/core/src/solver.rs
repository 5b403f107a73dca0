//! Direct method: for each target `a`, the smallest line through `(F_lo, D)`
//! majorising the shifted transformed reward has slope `β(a)` and touches at
//! `F(b(a))`; the optimal policy maximises `β` over `a`.
//!
//! All tangency equations are written in `x`-coordinates. With
//! `Ψ = φ(F − F_lo)` the line maps back to `βΨ(x) + Dφ(x)`, so
//!
//! `β(a) = sup_{x > a} (K̄(x, a) + D(φ(a) − φ(x))) / (Ψ(x) − Ψ(a))`
//!
//! and the touching point solves `N′Δ − NΔ′ = 0` for the numerator `N` and
//! denominator `Δ` of that ratio.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SolveError};
use crate::fundamentals::PairValues;
use crate::model::{Band, BandPolicy};
use crate::numerics::{brent_root, central_diff, golden_max};
use crate::transform::TransformContext;

/// Tolerance on tangency points, in `x`.
pub const X_TOL: f64 = 1e-9;
/// Golden-section tolerance when maximising `β(a)`.
pub const A_TOL: f64 = 1e-7;
/// Relative tolerance for treating two slopes as equal.
pub const TIE_TOL: f64 = 1e-4;
/// Targets closer than this to the left boundary are not scanned.
pub const BOUNDARY_GAP: f64 = 1e-4;

/// Outcome of the tangency problem for one target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageResult {
    pub a: f64,
    pub b: f64,
    pub beta: f64,
    /// Post-intervention value `βΨ(a) + Dφ(a)` of the excess over `g`.
    pub gamma: f64,
    /// Tangency residual at `b`, relative to the size of its terms.
    pub residual: f64,
    /// Every local tangency found, as `(b, β)`.
    pub roots: Vec<(f64, f64)>,
    /// Another tangency attains the same slope within the tie tolerance.
    pub multi_trigger: bool,
}

/// Result of the `γ` fixed-point problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaOutcome {
    Fixed(f64),
    /// `K̄(·, a) ≤ 0` everywhere: not intervening is optimal.
    NoIntervention,
}

/// Precomputed pair values on a grid covering the truncated interval.
pub struct Solver<'c> {
    ctx: &'c TransformContext,
    grid: Vec<f64>,
    vals: Vec<PairValues>,
}

/// Everything `maximize_slope` produces.
#[derive(Debug, Clone, Serialize)]
pub struct SolveOutcome {
    pub policy: BandPolicy,
    /// One stage per band.
    pub stages: Vec<StageResult>,
    /// `(a, β(a))` on the scan grid; `None` where no tangency exists.
    pub scan: Vec<(f64, Option<f64>)>,
    pub warnings: Vec<String>,
}

impl<'c> Solver<'c> {
    pub fn new(ctx: &'c TransformContext) -> Self {
        let (x_min, x_max) = (ctx.x_min, ctx.x_max);
        let span = x_max - x_min;
        let n_uniform = 2 * ctx.problem.settings.tangency_points;
        let mut grid: Vec<f64> = (0..=n_uniform)
            .map(|i| x_min + span * i as f64 / n_uniform as f64)
            .collect();
        let first_gap = span / n_uniform as f64;
        grid.extend((0..40).map(|k| x_min + first_gap * 1e-5f64.powf(k as f64 / 40.0)));
        grid.retain(|&x| x > x_min);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let vals = grid.par_iter().map(|&x| ctx.pair.values(x)).collect();
        Solver { ctx, grid, vals }
    }

    pub fn context(&self) -> &TransformContext {
        self.ctx
    }

    fn anchored(&self, v: &PairValues) -> (f64, f64) {
        let f_lo = self.ctx.f_lo;
        (v.psi - f_lo * v.phi, v.dpsi - f_lo * v.dphi)
    }

    /// Points `x > a` to search: a geometric cluster just above `a` plus the
    /// cached grid, with their pair values.
    fn candidates(&self, a: f64) -> Vec<(f64, PairValues)> {
        let start = self.grid.partition_point(|&x| x <= a);
        let next = self.grid.get(start).copied().unwrap_or(self.ctx.x_max);
        let gap = (next - a).max(1e-12);
        let mut out: Vec<(f64, PairValues)> = (1..24)
            .rev()
            .map(|k| {
                let x = a + gap * 0.5f64.powi(k);
                (x, self.ctx.pair.values(x))
            })
            .collect();
        out.extend(
            self.grid[start..]
                .iter()
                .zip(&self.vals[start..])
                .map(|(&x, &v)| (x, v)),
        );
        out
    }

    /// `(N, Δ)` at `x` for target `a`.
    fn ratio_parts(&self, a: f64, at_a: &PairValues, x: f64, v: &PairValues) -> (f64, f64) {
        let d = self.ctx.d;
        let num = self.ctx.kbar(x, a) + d * (at_a.phi - v.phi);
        let den = self.anchored(v).0 - self.anchored(at_a).0;
        (num, den)
    }

    /// Tangency residual `N′Δ − NΔ′` at `x` and the scale of its terms.
    fn residual(&self, a: f64, at_a: &PairValues, x: f64) -> (f64, f64) {
        let v = self.ctx.pair.values(x);
        let (num, den) = self.ratio_parts(a, at_a, x, &v);
        let dnum = self.ctx.reward_dx(x, a) - self.ctx.d * v.dphi;
        let dden = self.anchored(&v).1;
        let (t1, t2) = (dnum * den, num * dden);
        (t1 - t2, t1.abs() + t2.abs())
    }

    /// Solves the tangency problem for target `a`.
    pub fn tangency_solve(&self, a: f64) -> Result<StageResult> {
        let ctx = self.ctx;
        let at_a = ctx.pair.values(a);
        let cands = self.candidates(a);
        let q: Vec<f64> = cands
            .iter()
            .map(|(x, v)| {
                let (num, den) = self.ratio_parts(a, &at_a, *x, v);
                let r = num / den;
                if r.is_finite() {
                    r
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let n = q.len();
        if n < 3 {
            return Err(SolveError::NoTangency { a });
        }
        let (imax, &qmax) = q
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty candidate list");
        if imax == n - 1 || !qmax.is_finite() {
            return Err(SolveError::NoTangency { a });
        }

        let mut roots = Vec::new();
        for i in 1..n - 1 {
            if !(q[i] >= q[i - 1] && q[i] >= q[i + 1] && q[i].is_finite()) {
                continue;
            }
            let b = self.refine_tangency(a, &at_a, cands[i - 1].0, cands[i + 1].0);
            let (num, den) = self.ratio_parts(a, &at_a, b, &ctx.pair.values(b));
            let beta = num / den;
            roots.push(if beta >= q[i] {
                (b, beta)
            } else {
                (cands[i].0, q[i])
            });
        }
        let &(b, beta) = roots
            .iter()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .ok_or(SolveError::NoTangency { a })?;
        roots.sort_by(|x, y| x.0.total_cmp(&y.0));
        roots.dedup_by(|x, y| (x.0 - y.0).abs() < 1e3 * X_TOL);
        let multi_trigger = roots
            .iter()
            .filter(|r| (r.1 - beta).abs() <= TIE_TOL * beta.abs())
            .count()
            > 1;
        let (rho, scale) = self.residual(a, &at_a, b);
        let gamma = beta * self.anchored(&at_a).0 + ctx.d * at_a.phi;
        Ok(StageResult {
            a,
            b,
            beta,
            gamma,
            residual: if scale > 0.0 { rho.abs() / scale } else { 0.0 },
            roots,
            multi_trigger,
        })
    }

    fn refine_tangency(&self, a: f64, at_a: &PairValues, lo: f64, hi: f64) -> f64 {
        let rho = |x: f64| self.residual(a, at_a, x).0;
        match brent_root(rho, lo, hi, X_TOL, 200) {
            Ok(b) => b,
            Err(_) => {
                let q = |x: f64| {
                    let v = self.ctx.pair.values(x);
                    let (num, den) = self.ratio_parts(a, at_a, x, &v);
                    num / den
                };
                golden_max(q, lo, hi, X_TOL).0
            }
        }
    }

    /// `β(a)`, or `None` when no tangency exists inside the truncated domain.
    pub fn slope(&self, a: f64) -> Option<f64> {
        self.tangency_solve(a).ok().map(|s| s.beta)
    }

    /// Value at `a` of the smallest line through `(F_lo, D)` majorising the
    /// stopping reward `K̄(x, a) + γ` over `x ≥ a`.
    pub fn stopping_value(&self, a: f64, gamma: f64) -> f64 {
        let ctx = self.ctx;
        let at_a = ctx.pair.values(a);
        let (psi_a, _) = self.anchored(&at_a);
        let d = ctx.d;
        let ratio = |x: f64, v: &PairValues| {
            let r = (ctx.reward(x, a) + gamma - d * v.phi) / self.anchored(v).0;
            if r.is_finite() {
                r
            } else {
                f64::NEG_INFINITY
            }
        };
        let mut cands = vec![(a, at_a)];
        cands.extend(self.candidates(a));
        let s: Vec<f64> = cands.iter().map(|(x, v)| ratio(*x, v)).collect();
        let (imax, &smax) = s
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("non-empty candidate list");
        let mut best = smax;
        if imax > 0 && imax + 1 < cands.len() {
            let (lo, hi) = (cands[imax - 1].0, cands[imax + 1].0);
            let (_, refined) = golden_max(|x| ratio(x, &ctx.pair.values(x)), lo, hi, X_TOL);
            best = best.max(refined);
        }
        best * psi_a + d * at_a.phi
    }

    /// Fixed point `γ = V^γ_a(a)` by bisection on the nonincreasing map
    /// `γ ↦ V^γ_a(a) − γ`.
    pub fn solve_gamma(&self, a: f64) -> Result<GammaOutcome> {
        let ctx = self.ctx;
        let any_positive = self
            .candidates(a)
            .iter()
            .any(|(x, _)| ctx.kbar(*x, a) > 0.0);
        if !any_positive {
            return Ok(GammaOutcome::NoIntervention);
        }
        let gap = |g: f64| self.stopping_value(a, g) - g;
        let mut lo = 0.0;
        let mut step = 1.0;
        while gap(lo) < 0.0 {
            lo -= step;
            step *= 2.0;
            if step > 1e300 {
                return Err(SolveError::NoBracket { a: lo, b: 0.0 });
            }
        }
        let mut hi = lo.max(0.0) + 1.0;
        while gap(hi) >= 0.0 {
            hi = 2.0 * hi + 1.0;
            if hi > 1e300 {
                return Err(SolveError::NoBracket { a: lo, b: hi });
            }
        }
        for _ in 0..400 {
            let mid = 0.5 * (lo + hi);
            if gap(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-13 * (1.0 + lo.abs()) {
                break;
            }
        }
        Ok(GammaOutcome::Fixed(0.5 * (lo + hi)))
    }

    /// Scan targets for the scan grid: geometric near the left end, then uniform.
    pub fn scan_grid(&self) -> Vec<f64> {
        let ctx = self.ctx;
        let n = ctx.problem.settings.scan_points;
        let n_geo = n / 4;
        let n_uni = n - n_geo;
        let lo = ctx.x_min + BOUNDARY_GAP;
        let hi = ctx.x_max - 0.02 * (ctx.x_max - ctx.x_min);
        let step = (hi - lo) / (n_uni - 1) as f64;
        let mut grid: Vec<f64> = (0..n_uni).map(|i| lo + step * i as f64).collect();
        grid.extend((1..=n_geo).map(|k| lo + step * 1e-3f64.powf(k as f64 / n_geo as f64)));
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        grid
    }

    /// Maximises `β(a)` and collects every target attaining the maximum.
    pub fn maximize_slope(&self) -> Result<SolveOutcome> {
        let ctx = self.ctx;
        let targets = self.scan_grid();
        let scan: Vec<(f64, Option<f64>)> =
            targets.par_iter().map(|&a| (a, self.slope(a))).collect();
        let empty = |warnings: Vec<String>| SolveOutcome {
            policy: BandPolicy::empty(ctx.f_lo, ctx.d),
            stages: Vec::new(),
            scan: scan.clone(),
            warnings,
        };
        if scan.iter().all(|(_, b)| b.is_none()) {
            let all_negative = targets.iter().all(|&a| {
                self.candidates(a)
                    .iter()
                    .all(|(x, _)| ctx.kbar(*x, a) <= 0.0)
            });
            if all_negative {
                return Ok(empty(Vec::new()));
            }
            return Err(SolveError::NoTangency { a: targets[0] });
        }

        // Local maxima of the scan, refined by golden section between neighbours.
        let values: Vec<f64> = scan
            .iter()
            .map(|(_, b)| b.unwrap_or(f64::NEG_INFINITY))
            .collect();
        let n = values.len();
        let mut peaks = Vec::new();
        for i in 0..n {
            let left = if i > 0 {
                values[i - 1]
            } else {
                f64::NEG_INFINITY
            };
            let right = if i + 1 < n {
                values[i + 1]
            } else {
                f64::NEG_INFINITY
            };
            if values[i].is_finite() && values[i] >= left && values[i] >= right {
                peaks.push(i);
            }
        }
        let mut refined: Vec<StageResult> = peaks
            .par_iter()
            .filter_map(|&i| {
                let lo = targets[i.saturating_sub(1)];
                let hi = targets[(i + 1).min(n - 1)];
                let (a, _) = golden_max(
                    |a| self.slope(a).unwrap_or(f64::NEG_INFINITY),
                    lo,
                    hi,
                    A_TOL,
                );
                let stage = self.tangency_solve(a).ok();
                let at_grid = self.tangency_solve(targets[i]).ok();
                match (stage, at_grid) {
                    (Some(s), Some(g)) => Some(if s.beta >= g.beta { s } else { g }),
                    (s, g) => s.or(g),
                }
            })
            .collect();
        refined.sort_by(|x, y| y.beta.total_cmp(&x.beta));
        let Some(best) = refined.first().map(|s| s.beta) else {
            return Err(SolveError::NoTangency { a: targets[0] });
        };
        if !(best > 0.0) {
            return Ok(empty(Vec::new()));
        }
        let mut stages: Vec<StageResult> = refined
            .into_iter()
            .filter(|s| (best - s.beta) <= TIE_TOL * best.abs())
            .collect();
        stages.sort_by(|x, y| x.a.total_cmp(&y.a));
        stages.dedup_by(|x, y| (x.a - y.a).abs() < 1e3 * A_TOL);
        // Keep bands ordered and disjoint, preferring the larger slope.
        let mut kept: Vec<StageResult> = Vec::new();
        for s in stages {
            match kept.last() {
                Some(prev) if s.a < prev.b => {
                    if s.beta > prev.beta {
                        kept.pop();
                        kept.push(s);
                    }
                }
                _ => kept.push(s),
            }
        }

        let mut warnings = Vec::new();
        for s in &kept {
            if s.multi_trigger {
                warnings.push(format!(
                    "target {:.6} has several tangency points with the same slope; only the one at {:.6} is used",
                    s.a, s.b
                ));
            }
        }
        if let Some(s) = kept.first() {
            let xs: Vec<f64> = (1..=200)
                .map(|i| s.a + (ctx.x_max - s.a) * i as f64 / 201.0)
                .collect();
            let profile = ctx.concavity_profile(|x| ctx.kbar(x, s.a), &xs);
            if profile.changes.len() > 1 && kept.len() == 1 {
                warnings.push(format!(
                    "shifted reward changes concavity {} times to the right of the target; optimality assumes a connected continuation region",
                    profile.changes.len()
                ));
            }
        }
        let beta = kept
            .iter()
            .map(|s| s.beta)
            .fold(f64::NEG_INFINITY, f64::max);
        let policy = BandPolicy {
            bands: kept.iter().map(|s| Band { a: s.a, b: s.b }).collect(),
            beta,
            intercept: ctx.d,
            f_lo: ctx.f_lo,
        };
        Ok(SolveOutcome {
            policy,
            stages: kept,
            scan,
            warnings,
        })
    }
}

/// Solves a problem end to end: context, slope maximisation, value function.
pub fn solve(ctx: &TransformContext) -> Result<(SolveOutcome, ValueFunction<'_>)> {
    let outcome = Solver::new(ctx).maximize_slope()?;
    let value = ValueFunction::assemble(ctx, outcome.policy.clone());
    Ok((outcome, value))
}

/// Piecewise value function of a band policy: the transformed line mapped
/// back on the continuation region, the best intervention beyond the last
/// trigger.
#[derive(Debug, Clone)]
pub struct ValueFunction<'c> {
    ctx: &'c TransformContext,
    pub policy: BandPolicy,
}

/// One-sided derivatives of the value at a trigger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothFit {
    pub left: f64,
    pub right: f64,
    pub gap: f64,
}

impl<'c> ValueFunction<'c> {
    pub fn assemble(ctx: &'c TransformContext, policy: BandPolicy) -> Self {
        ValueFunction { ctx, policy }
    }

    pub fn context(&self) -> &TransformContext {
        self.ctx
    }

    /// `v₀(x) = φ(x)W*(F(x)) + g(x)`.
    pub fn continuation(&self, x: f64) -> f64 {
        let beta = if self.policy.is_empty() {
            0.0
        } else {
            self.policy.beta
        };
        self.ctx.line_value(beta, x) + self.ctx.g(x)
    }

    pub fn continuation_dx(&self, x: f64) -> f64 {
        let beta = if self.policy.is_empty() {
            0.0
        } else {
            self.policy.beta
        };
        let v = self.ctx.pair.values(x);
        let (_, dpsi) = self.ctx.anchored(x);
        beta * dpsi + self.ctx.d * v.dphi + self.ctx.dg(x)
    }

    /// Value of intervening at `x` toward band `k`: `v₀(a_k) + K(x, a_k)`.
    pub fn intervention(&self, x: f64, k: usize) -> f64 {
        let a = self.policy.bands[k].a;
        self.continuation(a) + self.ctx.problem.k(x, a)
    }

    fn best_band(&self, x: f64) -> usize {
        (0..self.policy.bands.len())
            .filter(|&k| self.policy.bands[k].a < x)
            .max_by(|&i, &j| self.intervention(x, i).total_cmp(&self.intervention(x, j)))
            .unwrap_or(self.policy.bands.len() - 1)
    }

    /// `v(x)`.
    pub fn value(&self, x: f64) -> f64 {
        let d = &self.ctx.problem.diffusion;
        if d.is_absorbing() && x == d.lo {
            return d.penalty();
        }
        match self.policy.bands.last() {
            Some(last) if x > last.b => self.intervention(x, self.best_band(x)),
            _ => self.continuation(x),
        }
    }

    /// `v′(x)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self.policy.bands.last() {
            Some(last) if x > last.b => {
                let a = self.policy.bands[self.best_band(x)].a;
                central_diff(|t| self.ctx.problem.k(t, a), x)
            }
            _ => self.continuation_dx(x),
        }
    }

    /// One-sided second-order differences (step `1e-5`) of the continuation
    /// piece from the left and the intervention piece from the right at `b_k`.
    pub fn smooth_fit(&self, k: usize) -> SmoothFit {
        let b = self.policy.bands[k].b;
        let h = 1e-5;
        let c = |x: f64| self.continuation(x);
        let i = |x: f64| self.intervention(x, k);
        let left = (3.0 * c(b) - 4.0 * c(b - h) + c(b - 2.0 * h)) / (2.0 * h);
        let right = (-3.0 * i(b) + 4.0 * i(b + h) - i(b + 2.0 * h)) / (2.0 * h);
        SmoothFit {
            left,
            right,
            gap: (left - right).abs(),
        }
    }
}
