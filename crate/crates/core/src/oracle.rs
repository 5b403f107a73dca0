//! Value iteration in transformed coordinates: alternately apply the
//! intervention operator `𝓜u(x) = sup_{y<x} [K̄(x, y) + u(y)]` and replace
//! the result by its smallest concave majorant through `(F_lo, D)`.
//!
//! Iterates are stored as `Φ_n(y) = (w_n − g)/φ` at `y = F(x)` on a grid
//! uniform in `y`; node 0 is the boundary point itself.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SolveError};
use crate::numerics::locate;
use crate::transform::TransformContext;

/// Grid size and stopping rule of the iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub nodes: usize,
    pub max_iter: usize,
    pub tol: f64,
    /// Right end of the grid in `x`.
    pub x_hi: f64,
}

impl OracleParams {
    pub fn from_context(ctx: &TransformContext) -> Self {
        let s = &ctx.problem.settings;
        OracleParams {
            nodes: s.oracle_nodes,
            max_iter: s.oracle_max_iter,
            tol: s.oracle_tol,
            x_hi: s.oracle_hi.unwrap_or(ctx.x_max),
        }
    }
}

/// A node where the converged iterate touches the intervention value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriggerNode {
    pub x: f64,
    pub y: f64,
    /// Best post-intervention state from this node.
    pub target: f64,
}

/// Result of value iteration.
#[derive(Debug, Clone, Serialize)]
pub struct OracleGrid {
    pub ys: Vec<f64>,
    /// `F⁻¹` of each node; the boundary node holds the left end of the domain.
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub iterations: usize,
    /// Scaled sup-change `sup|Φ_{n+1} − Φ_n| / max(1, sup|Φ_{n+1}|)` per iteration.
    pub changes: Vec<f64>,
    pub converged: bool,
    /// Start of each run of nodes where the iterate equals the intervention value.
    pub triggers: Vec<TriggerNode>,
    /// Iterates kept for output, as `(n, Φ_n)`.
    pub snapshots: Vec<(usize, Vec<f64>)>,
}

impl OracleGrid {
    /// Linear interpolation of the iterate at `y`.
    pub fn value_at(&self, y: f64) -> f64 {
        interpolate(&self.ys, &self.values, y)
    }
}

fn interpolate(ys: &[f64], vals: &[f64], y: f64) -> f64 {
    let i = locate(ys, y);
    let t = (y - ys[i]) / (ys[i + 1] - ys[i]);
    vals[i] + t * (vals[i + 1] - vals[i])
}

/// Upper concave envelope of `points` (strictly increasing `y`), evaluated
/// at the same abscissae.
pub fn concave_envelope(points: &[(f64, f64)]) -> Result<Vec<f64>> {
    if points.len() < 2 {
        return Err(SolveError::IllPosed(
            "concave envelope needs at least two points".into(),
        ));
    }
    let hull = upper_hull(points);
    let mut out = Vec::with_capacity(points.len());
    let mut seg = 0;
    for (i, &(y, v)) in points.iter().enumerate() {
        while seg + 1 < hull.len() - 1 && points[hull[seg + 1]].0 < y {
            seg += 1;
        }
        if hull[seg] == i || hull[(seg + 1).min(hull.len() - 1)] == i {
            out.push(v);
            continue;
        }
        let (y0, v0) = points[hull[seg]];
        let (y1, v1) = points[hull[(seg + 1).min(hull.len() - 1)]];
        out.push(if y1 == y0 {
            v0
        } else {
            v0 + (y - y0) / (y1 - y0) * (v1 - v0)
        });
    }
    Ok(out)
}

/// Indices of the upper hull vertices, left to right (monotone chain).
fn upper_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut hull: Vec<usize> = Vec::with_capacity(points.len());
    for (i, &(x, y)) in points.iter().enumerate() {
        while hull.len() >= 2 {
            let (x1, y1) = points[hull[hull.len() - 2]];
            let (x2, y2) = points[hull[hull.len() - 1]];
            // Drop the middle point unless it lies strictly above the chord.
            let cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    hull
}

/// Precomputed grid and shifted-reward matrix for value iteration.
pub struct Oracle<'c> {
    ctx: &'c TransformContext,
    params: OracleParams,
    ys: Vec<f64>,
    xs: Vec<f64>,
    phi: Vec<f64>,
    targets: Vec<f64>,
    target_ys: Vec<f64>,
    target_phi: Vec<f64>,
    /// `kbar[i][j] = K̄(x_i, t_j)` for targets below node `i`.
    kbar: Vec<Vec<f64>>,
    floor: f64,
}

impl<'c> Oracle<'c> {
    pub fn new(ctx: &'c TransformContext, params: OracleParams) -> Result<Self> {
        let n = params.nodes;
        let y_hi = ctx.pair.f(params.x_hi);
        let f_lo = ctx.f_lo;
        if !(y_hi > f_lo) {
            return Err(SolveError::IllPosed(format!(
                "grid end {} does not lie to the right of the boundary",
                params.x_hi
            )));
        }
        let ys: Vec<f64> = (0..n)
            .map(|i| f_lo + (y_hi - f_lo) * i as f64 / (n - 1) as f64)
            .collect();
        let left = if ctx.is_absorbing() {
            ctx.problem.diffusion.lo
        } else {
            ctx.x_min
        };
        let mut xs = vec![left];
        xs.extend(
            ys[1..]
                .par_iter()
                .map(|&y| ctx.pair.f_inv(y))
                .collect::<Result<Vec<f64>>>()?,
        );
        xs[n - 1] = params.x_hi;
        let phi: Vec<f64> = xs.par_iter().map(|&x| ctx.pair.phi(x)).collect();

        // Targets: every node plus a uniform grid in x, so that targets are
        // dense where the y-grid is sparse in x.
        let mut targets: Vec<f64> = xs[1..].to_vec();
        let t_lo = ctx.x_min.max(left);
        targets.extend((0..n).map(|i| t_lo + (params.x_hi - t_lo) * (i as f64 + 0.5) / n as f64));
        targets.sort_by(f64::total_cmp);
        targets.dedup();
        let target_ys: Vec<f64> = targets
            .par_iter()
            .map(|&t| ctx.pair.f(t).max(f_lo))
            .collect();
        let target_phi: Vec<f64> = targets.par_iter().map(|&t| ctx.pair.phi(t)).collect();

        let kbar: Vec<Vec<f64>> = xs
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                if i == 0 {
                    return Vec::new();
                }
                let end = targets.partition_point(|&t| t < x);
                targets[..end].iter().map(|&t| ctx.kbar(x, t)).collect()
            })
            .collect();
        let floor = ctx.d;
        Ok(Oracle {
            ctx,
            params,
            ys,
            xs,
            phi,
            targets,
            target_ys,
            target_phi,
            kbar,
            floor,
        })
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    /// Starting iterate: the no-intervention value, `Φ₀ ≡ D`.
    pub fn initial(&self) -> Vec<f64> {
        vec![self.ctx.d; self.ys.len()]
    }

    fn excess_at_targets(&self, values: &[f64]) -> Vec<f64> {
        self.target_ys
            .iter()
            .zip(&self.target_phi)
            .map(|(&y, &p)| p * interpolate(&self.ys, values, y))
            .collect()
    }

    /// `𝓜Φ` at every node (divided by `φ`), and the maximising target.
    /// The boundary node keeps its pinned value.
    pub fn intervention_with_targets(&self, values: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let u = self.excess_at_targets(values);
        let (h, arg): (Vec<f64>, Vec<f64>) = self
            .kbar
            .par_iter()
            .enumerate()
            .map(|(i, row)| {
                if i == 0 {
                    return (self.ctx.d, f64::NAN);
                }
                let mut best = f64::NEG_INFINITY;
                let mut arg = f64::NAN;
                for (j, &k) in row.iter().enumerate() {
                    let v = k + u[j];
                    if v > best {
                        best = v;
                        arg = self.targets[j];
                    }
                }
                (best / self.phi[i], arg)
            })
            .unzip();
        (h, arg)
    }

    /// `𝓜Φ` at every node, divided by `φ`.
    pub fn intervention(&self, values: &[f64]) -> Vec<f64> {
        self.intervention_with_targets(values).0
    }

    /// Smallest concave majorant through the boundary point of
    /// `max(h, floor)`.
    pub fn lift(&self, h: &[f64]) -> Vec<f64> {
        let points: Vec<(f64, f64)> = self
            .ys
            .iter()
            .zip(h)
            .enumerate()
            .map(|(i, (&y, &v))| {
                if i == 0 {
                    (y, self.ctx.d)
                } else {
                    (y, v.max(self.floor))
                }
            })
            .collect();
        let mut env = concave_envelope(&points).expect("grid has at least two nodes");
        env[0] = self.ctx.d;
        env
    }

    /// One application of the iteration map.
    pub fn step(&self, values: &[f64]) -> Vec<f64> {
        self.lift(&self.intervention(values))
    }

    /// Iterates from `Φ₀` until the scaled sup-change drops below `tol`.
    /// `log` selects iterations whose iterate is kept in the snapshots.
    pub fn run<L: Fn(usize) -> bool>(&self, log: L) -> OracleGrid {
        let mut values = self.initial();
        let mut last = (Vec::new(), Vec::new());
        let mut changes = Vec::new();
        let mut snapshots = Vec::new();
        let mut converged = false;
        let mut n = 0;
        while n < self.params.max_iter {
            last = self.intervention_with_targets(&values);
            let next = self.lift(&last.0);
            n += 1;
            let scale = next.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let change = next
                .iter()
                .zip(&values)
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
                / scale;
            values = next;
            changes.push(change);
            if log(n) {
                snapshots.push((n, values.clone()));
            }
            if change <= self.params.tol {
                converged = true;
                break;
            }
        }
        if snapshots.last().map(|s| s.0) != Some(n) {
            snapshots.push((n, values.clone()));
        }
        let triggers = self.triggers(&values, &last.0, &last.1);
        OracleGrid {
            ys: self.ys.clone(),
            xs: self.xs.clone(),
            values,
            iterations: n,
            changes,
            converged,
            triggers,
            snapshots,
        }
    }

    /// Nodes where the envelope `values` of the intervention values `h`
    /// touches them. Nodes within a loose relative gap form runs; each run
    /// reports its first node whose gap is within the iteration tolerance of
    /// the smallest gap in the run. The loose pass is needed because bands
    /// sharing one slope are collinear only up to discretisation error.
    pub fn triggers(&self, values: &[f64], h: &[f64], targets: &[f64]) -> Vec<TriggerNode> {
        const LOOSE: f64 = 1e-4;
        let tol = self.params.tol.max(1e-12);
        let n = values.len().min(h.len());
        let scale = |i: usize| values[i].abs().max(1.0);
        let gap: Vec<f64> = (0..n).map(|i| values[i] - h[i]).collect();
        let near = |i: usize| h[i] > self.floor && gap[i] <= LOOSE * scale(i);
        let mut out = Vec::new();
        let mut i = 1;
        while i < n {
            if !near(i) {
                i += 1;
                continue;
            }
            let start = i;
            while i < n && near(i) {
                i += 1;
            }
            let min_gap = gap[start..i].iter().copied().fold(f64::INFINITY, f64::min);
            if let Some(k) = (start..i).find(|&k| gap[k] <= min_gap + tol * scale(k)) {
                out.push(TriggerNode {
                    x: self.xs[k],
                    y: self.ys[k],
                    target: targets[k],
                });
            }
        }
        out
    }

    /// Value of the iterate mapped back to `x`: `φ(x)Φ(F(x)) + g(x)`.
    pub fn value(&self, grid: &OracleGrid, x: f64) -> f64 {
        let y = self.ctx.pair.f(x).max(self.ctx.f_lo);
        self.ctx.pair.phi(x) * grid.value_at(y) + self.ctx.g(x)
    }
}

/// Runs value iteration with the problem's settings, logging iterations
/// 1, 2, 5, 10, 20, 50, ... and the last one.
pub fn value_iteration(ctx: &TransformContext) -> Result<OracleGrid> {
    let oracle = Oracle::new(ctx, OracleParams::from_context(ctx))?;
    let grid = oracle.run(is_logged_iteration);
    if !grid.converged {
        return Err(SolveError::NoConvergence {
            iterations: grid.iterations,
            change: grid.changes.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(grid)
}

/// `n ∈ {1, 2, 5, 10, 20, 50, ...}`.
pub fn is_logged_iteration(n: usize) -> bool {
    let mut p = 1;
    while p <= n {
        if n == p || n == 2 * p || n == 5 * p {
            return true;
        }
        p *= 10;
    }
    false
}
