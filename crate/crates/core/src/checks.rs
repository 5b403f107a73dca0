//! Structural checks on a solved problem: F-concavity, linearity, majorant
//! and contraction properties of the direct solution, the envelope routine
//! against brute force, monotone value iteration, smooth fit and the
//! special functions.
//!
//! Tolerances are relative to `max(1, |magnitude|)` of the quantities
//! compared.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::fundamentals::{hermite_fn, parabolic_cylinder};
use crate::oracle::{concave_envelope, Oracle, OracleParams};
use crate::solver::{GammaOutcome, SolveOutcome, Solver, ValueFunction};
use crate::transform::TransformContext;

/// One named check with the worst observed discrepancy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tol: f64,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, worst: f64, tol: f64, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed: worst <= tol,
            worst,
            tol,
            detail,
        }
    }
}

fn scale(v: f64) -> f64 {
    v.abs().max(1.0)
}

/// Left and right ends of the region the checks sample.
fn sample_range(ctx: &TransformContext) -> (f64, f64) {
    (ctx.x_min, OracleParams::from_context(ctx).x_hi)
}

/// `(v − g)/φ` at `x`, paired with `F(x)`.
fn excess(value: &ValueFunction<'_>, x: f64) -> (f64, f64) {
    let ctx = value.context();
    let p = ctx.pair.values(x);
    (p.f(), (value.value(x) - ctx.g(x)) / p.phi)
}

/// Midpoint-above-chord test of `(v − g)/φ ∘ F⁻¹` on random triples.
pub fn f_concavity(value: &ValueFunction<'_>, triples: usize, seed: u64, tol: f64) -> CheckOutcome {
    let ctx = value.context();
    let (lo, hi) = sample_range(ctx);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut tested = 0;
    for _ in 0..triples {
        let mut xs = [
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
            rng.random_range(lo..hi),
        ];
        xs.sort_by(f64::total_cmp);
        let [p1, p2, p3] = xs.map(|x| excess(value, x));
        if !(p1.0 < p2.0 && p2.0 < p3.0) {
            continue;
        }
        tested += 1;
        let chord = p1.1 + (p2.0 - p1.0) / (p3.0 - p1.0) * (p3.1 - p1.1);
        let shortfall = (chord - p2.1) / scale(chord);
        worst = worst.max(shortfall);
    }
    CheckOutcome::new(
        "F-concavity chord test",
        worst,
        tol,
        format!("{tested} triples on [{lo}, {hi}]"),
    )
}

/// Least-squares line through `(v − g)/φ ∘ F⁻¹` on `[x_min, b₁]`; reports
/// the largest scaled residual.
pub fn linearity(value: &ValueFunction<'_>, points: usize, tol: f64) -> CheckOutcome {
    let ctx = value.context();
    let Some(first) = value.policy.bands.first() else {
        return CheckOutcome::new("linearity on continuation", 0.0, tol, "empty policy".into());
    };
    let (lo, hi) = (ctx.x_min, first.b);
    let pts: Vec<(f64, f64)> = (0..points)
        .map(|i| excess(value, lo + (hi - lo) * i as f64 / (points - 1) as f64))
        .collect();
    let n = pts.len() as f64;
    let my = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - my) * (p.1 - mv)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - my) * (p.0 - my)).sum();
    let slope = sxy / sxx;
    let worst = pts
        .iter()
        .map(|p| (p.1 - (mv + slope * (p.0 - my))).abs() / scale(p.1))
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "linearity on continuation",
        worst,
        tol,
        format!("fitted slope {slope:.10e}, β* {:.10e}", value.policy.beta),
    )
}

/// `v(x) ≥ K(x, a_k) + v(a_k)` for `x > a_k`, every band.
pub fn majorant(value: &ValueFunction<'_>, points: usize, tol: f64) -> CheckOutcome {
    let ctx = value.context();
    let (_, hi) = sample_range(ctx);
    let mut worst: f64 = 0.0;
    for band in &value.policy.bands {
        let va = value.value(band.a);
        for i in 1..=points {
            let x = band.a + (hi - band.a) * i as f64 / points as f64;
            let v = value.value(x);
            let reward = ctx.problem.k(x, band.a) + va;
            worst = worst.max((reward - v) / scale(v));
        }
    }
    CheckOutcome::new(
        "majorant of shifted reward",
        worst,
        tol,
        format!("{} bands", value.policy.bands.len()),
    )
}

/// `β* ≥ β(a)` on the scan grid.
pub fn slope_dominance(outcome: &SolveOutcome, tol: f64) -> CheckOutcome {
    let beta = outcome.policy.beta;
    let worst = outcome
        .scan
        .iter()
        .filter_map(|(_, b)| *b)
        .map(|b| (b - beta) / scale(beta))
        .fold(0.0, f64::max);
    CheckOutcome::new(
        "slope dominance over scan",
        worst,
        tol,
        format!("{} scanned targets", outcome.scan.len()),
    )
}

fn random_targets(solver: &Solver<'_>, count: usize, seed: u64) -> Vec<(f64, f64)> {
    let grid = solver.scan_grid();
    let (lo, hi) = (grid[0], grid[grid.len() - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..50 * count {
        if out.len() == count {
            break;
        }
        let a = rng.random_range(lo..hi);
        if let Ok(GammaOutcome::Fixed(g)) = solver.solve_gamma(a) {
            out.push((a, g));
        }
    }
    out
}

/// `0 ≤ V^{γ+Δ}_a(a) − V^γ_a(a) ≤ Δ` at random targets and their fixed points.
pub fn contraction(
    ctx: &TransformContext,
    deltas: &[f64],
    targets: usize,
    seed: u64,
    tol: f64,
) -> CheckOutcome {
    let solver = Solver::new(ctx);
    let pts = random_targets(&solver, targets, seed);
    let mut worst: f64 = 0.0;
    for &(a, g) in &pts {
        let base = solver.stopping_value(a, g);
        for &d in deltas {
            let inc = solver.stopping_value(a, g + d) - base;
            let s = scale(base);
            worst = worst.max((inc - d) / s).max(-inc / s);
        }
    }
    CheckOutcome::new(
        "contraction of stopping value",
        worst,
        tol,
        format!("{} targets, Δ ∈ {deltas:?}", pts.len()),
    )
}

/// `γ ↦ V^γ_a(a) − γ` has exactly one sign change on a bracket around its
/// root, at random targets.
pub fn unique_sign_change(ctx: &TransformContext, targets: usize, seed: u64) -> CheckOutcome {
    let solver = Solver::new(ctx);
    let pts = random_targets(&solver, targets, seed);
    let mut bad = 0;
    for &(a, g) in &pts {
        let width = scale(g);
        let mut offsets: Vec<f64> = (-8..=4).map(|k| 10f64.powi(k) * width).collect();
        offsets.extend(offsets.clone().iter().map(|o| -o));
        offsets.sort_by(f64::total_cmp);
        let signs: Vec<bool> = offsets
            .iter()
            .map(|o| solver.stopping_value(a, g + o) - (g + o) >= 0.0)
            .collect();
        let changes = signs.windows(2).filter(|w| w[0] != w[1]).count();
        if changes != 1 || !signs[0] {
            bad += 1;
        }
    }
    CheckOutcome::new(
        "unique sign change of the fixed-point map",
        bad as f64,
        0.0,
        format!("{} of {} targets failed", bad, pts.len()),
    )
}

fn brute_envelope(points: &[(f64, f64)]) -> Vec<f64> {
    let n = points.len();
    let mut out: Vec<f64> = points.iter().map(|p| p.1).collect();
    for j in 0..n {
        for k in j + 1..n {
            let (y0, v0) = points[j];
            let (y1, v1) = points[k];
            for i in j + 1..k {
                let y = points[i].0;
                let v = v0 + (y - y0) / (y1 - y0) * (v1 - v0);
                out[i] = out[i].max(v);
            }
        }
    }
    out
}

/// `concave_envelope` against the all-chords maximum on random point sets.
pub fn envelope_brute_force(instances: usize, seed: u64, tol: f64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..60);
        let mut y = 0.0;
        let points: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                y += rng.random_range(0.01..1.0);
                (y, rng.random_range(-10.0..10.0))
            })
            .collect();
        let fast = concave_envelope(&points).expect("at least two points");
        let slow = brute_envelope(&points);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs() / scale(*b));
        }
    }
    CheckOutcome::new(
        "concave envelope against brute force",
        worst,
        tol,
        format!("{instances} random instances"),
    )
}

/// `Φ_{n+1} ≥ Φ_n` at every node over the first `steps` iterations on a
/// coarser grid.
pub fn monotone_iteration(
    ctx: &TransformContext,
    nodes: usize,
    steps: usize,
    tol: f64,
) -> CheckOutcome {
    let mut params = OracleParams::from_context(ctx);
    params.nodes = nodes;
    let oracle = match Oracle::new(ctx, params) {
        Ok(o) => o,
        Err(e) => {
            return CheckOutcome::new(
                "monotone value iteration",
                f64::INFINITY,
                tol,
                e.to_string(),
            )
        }
    };
    let mut values = oracle.initial();
    let mut worst: f64 = 0.0;
    let mut done = 0;
    for _ in 0..steps {
        let next = oracle.step(&values);
        let mut change: f64 = 0.0;
        for (a, b) in values.iter().zip(&next) {
            worst = worst.max((a - b) / scale(*a));
            change = change.max((a - b).abs() / scale(*b));
        }
        values = next;
        done += 1;
        if change <= params.tol {
            break;
        }
    }
    CheckOutcome::new(
        "monotone value iteration",
        worst,
        tol,
        format!("{done} iterations on {nodes} nodes"),
    )
}

/// `|v′(b⁻) − v′(b⁺)| ≤ rel·|v′(b)|` at every trigger.
pub fn smooth_fit(value: &ValueFunction<'_>, rel: f64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for k in 0..value.policy.bands.len() {
        let sf = value.smooth_fit(k);
        let denom = sf.left.abs().max(sf.right.abs()).max(1e-12);
        worst = worst.max(sf.gap / denom);
    }
    CheckOutcome::new(
        "smooth fit at triggers",
        worst,
        rel,
        format!("{} triggers", value.policy.bands.len()),
    )
}

/// `D₋₁(z)` by quadrature against `e^{z²/4}√(π/2) erfc(z/√2)` on `[−3, 3]`.
pub fn parabolic_closed_form(tol: f64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    for i in 0..=60 {
        let z = -3.0 + 0.1 * i as f64;
        let exact =
            (z * z / 4.0).exp() * (std::f64::consts::PI / 2.0).sqrt() * erfc(z / 2f64.sqrt());
        let got = parabolic_cylinder(-1.0, z).unwrap_or(f64::NAN);
        let err = (got - exact).abs();
        worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
    }
    CheckOutcome::new(
        "parabolic cylinder closed form",
        worst,
        tol,
        "61 points on [-3, 3]".into(),
    )
}

/// `𝓗′_ν = 2ν𝓗_{ν−1}` by central differences, relative to `max(1, |𝓗′|)`.
pub fn hermite_derivative(tol: f64) -> CheckOutcome {
    let mut worst: f64 = 0.0;
    let h = 1e-4;
    for &nu in &[-0.3, -0.5, -1.0, -1.05, -1.7, -2.5] {
        for i in 0..=12 {
            let z = -2.0 + 0.5 * i as f64;
            let plus = hermite_fn(nu, z + h);
            let minus = hermite_fn(nu, z - h);
            let lower = hermite_fn(nu - 1.0, z);
            let err = match (plus, minus, lower) {
                (Ok(p), Ok(m), Ok(l)) => {
                    let fd = (p - m) / (2.0 * h);
                    (fd - 2.0 * nu * l).abs() / scale(fd)
                }
                _ => f64::INFINITY,
            };
            worst = worst.max(err);
        }
    }
    CheckOutcome::new(
        "Hermite derivative identity",
        worst,
        tol,
        "6 orders × 13 points".into(),
    )
}

/// The full suite for one solved problem.
pub fn property_suite(
    ctx: &TransformContext,
    outcome: &SolveOutcome,
    value: &ValueFunction<'_>,
    seed: u64,
) -> Vec<CheckOutcome> {
    let mut out = vec![
        f_concavity(value, 500, seed, 1e-8),
        linearity(value, 400, 1e-9),
        majorant(value, 400, 1e-8),
        slope_dominance(outcome, 1e-6),
        contraction(ctx, &[0.1, 1.0, 10.0], 20, seed, 1e-9),
        unique_sign_change(ctx, 20, seed),
        envelope_brute_force(50, seed, 1e-12),
        monotone_iteration(ctx, 400, 60, 1e-12),
    ];
    if !outcome.policy.is_empty() {
        out.push(smooth_fit(value, 1e-3));
    }
    out
}
