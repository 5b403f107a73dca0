mod common;

use common::*;
use impulse_core::solver::{solve, GammaOutcome, Solver};
use impulse_core::transform::TransformContext;

/// Frozen from the brute-force slope search in `brute_force_slope_agrees`.
const EX1_A: f64 = 5.077232;
const EX1_B: f64 = 12.261080;
const EX1_BETA: f64 = 0.0492262;

fn ternary_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> (f64, f64) {
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// `β(a) = sup_{x>a} K̄(x, a)/(e^{λx} − e^{λa})` for the quadratic-cost
/// Brownian problem, written out by hand.
fn exchange_rate_slope(a: f64) -> (f64, f64) {
    let lam = 0.4f64.sqrt();
    let kbar = |x: f64| -150.0 - 50.0 * (x - a) + (x * x - a * a) / 0.2;
    let q = |x: f64| kbar(x) / ((lam * x).exp() - (lam * a).exp());
    let grid: Vec<f64> = (1..4000).map(|i| a + 0.005 * i as f64).collect();
    let i = (0..grid.len())
        .max_by(|&i, &j| q(grid[i]).total_cmp(&q(grid[j])))
        .unwrap();
    let lo = grid[i.saturating_sub(1)];
    let hi = grid[(i + 1).min(grid.len() - 1)];
    ternary_max(q, lo, hi)
}

#[test]
fn brute_force_slope_agrees() {
    let coarse: Vec<f64> = (0..200).map(|i| 0.05 * i as f64).collect();
    let i = (0..coarse.len())
        .max_by(|&i, &j| {
            exchange_rate_slope(coarse[i])
                .1
                .total_cmp(&exchange_rate_slope(coarse[j]).1)
        })
        .unwrap();
    let (a, beta) = ternary_max(
        |a| exchange_rate_slope(a).1,
        coarse[i] - 0.05,
        coarse[i] + 0.05,
    );
    let b = exchange_rate_slope(a).0;
    assert!((a - EX1_A).abs() < 2e-5, "a = {a}");
    assert!((b - EX1_B).abs() < 2e-5, "b = {b}");
    assert!(rel(beta, EX1_BETA) < 1e-5, "beta = {beta}");

    let ctx = context(EXCHANGE_RATE);
    let (out, _) = solve(&ctx).unwrap();
    let band = out.policy.bands[0];
    assert!((band.a - a).abs() < 1e-5);
    assert!((band.b - b).abs() < 1e-5);
    assert!(rel(out.policy.beta, beta) < 1e-7);
}

#[test]
fn exchange_rate_reference_band() {
    let ctx = context(EXCHANGE_RATE);
    let (out, value) = solve(&ctx).unwrap();
    assert_eq!(out.policy.bands.len(), 1);
    let band = out.policy.bands[0];
    assert!(rel(band.a, 5.077) < 0.01);
    assert!(rel(band.b, 12.261) < 0.01);
    assert!(rel(out.policy.beta, 0.0492) < 0.01);
    assert!(!out.stages[0].multi_trigger);
    assert!(out.policy.check_ordering(f64::NEG_INFINITY).is_ok());

    let lam = 0.4f64.sqrt();
    let beta = out.policy.beta;
    for x in [-4.0, 0.0, 3.0, 8.0, band.b] {
        let closed = beta * (lam * x).exp() - (x * x / 0.2 + 25.0);
        assert!(rel(value.value(x), closed) < 1e-10, "at x = {x}");
    }
    assert!((value.value(0.0) + 24.95).abs() < 0.01);
}

#[test]
fn tangency_at_reference_targets() {
    let ctx = context(EXCHANGE_RATE);
    let s = Solver::new(&ctx).tangency_solve(5.077).unwrap();
    assert!(rel(s.b, 12.261) < 0.01 && rel(s.beta, 0.0492) < 0.01);

    let ctx = context(DIVIDEND);
    let s = Solver::new(&ctx).tangency_solve(0.2192).unwrap();
    assert!(rel(s.b, 0.6220) < 0.01 && rel(s.beta, 0.5749) < 0.01);
}

fn assert_touching(ctx: &TransformContext, a: f64) {
    let s = Solver::new(ctx).tangency_solve(a).unwrap();
    let at_b = ctx.line_value(s.beta, s.b);
    let shifted = ctx.kbar(s.b, a) + ctx.line_value(s.beta, a);
    assert!(
        (at_b - shifted).abs() <= 1e-8 * at_b.abs().max(1.0),
        "a = {a}"
    );
    assert!((s.gamma - ctx.line_value(s.beta, a)).abs() <= 1e-12 * s.gamma.abs().max(1.0));
    assert!(s.residual <= 1e-6);
}

#[test]
fn tangency_touches_shifted_reward() {
    let ctx = context(EXCHANGE_RATE);
    for a in [2.0, 5.077, 7.5] {
        assert_touching(&ctx, a);
    }
    let ctx = context(DIVIDEND);
    for a in [0.1, 0.2192, 0.4] {
        assert_touching(&ctx, a);
    }
}

#[test]
fn dividend_reference_band() {
    let ctx = context(DIVIDEND);
    let (out, value) = solve(&ctx).unwrap();
    assert_eq!(out.policy.bands.len(), 1);
    let band = out.policy.bands[0];
    assert!(rel(band.a, 0.2192) < 0.01, "a = {}", band.a);
    assert!(rel(band.b, 0.6220) < 0.01, "b = {}", band.b);
    assert!(
        rel(out.policy.beta, 0.5749) < 0.01,
        "beta = {}",
        out.policy.beta
    );
    assert_eq!(value.value(0.0), 0.0);
    let sf = value.smooth_fit(0);
    assert!(sf.gap <= 1e-3 * sf.left.abs());
}

#[test]
fn sine_reward_gives_periodic_bands() {
    let ctx = context(SINE);
    let (out, _) = solve(&ctx).unwrap();
    let bands = &out.policy.bands;
    assert!(bands.len() >= 3);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (k, band) in bands.iter().enumerate() {
        let shift = two_pi * k as f64;
        assert!((band.a - 2.7654 - shift).abs() < 1e-3, "band {k}: {band:?}");
        assert!((band.b - 3.5178 - shift).abs() < 1e-3, "band {k}: {band:?}");
    }
    assert!(rel(out.policy.beta, 9.30) < 0.01);
    for stage in &out.stages {
        assert!(rel(stage.beta, out.policy.beta) < 1e-4);
    }
    assert!(out.policy.check_ordering(0.0).is_ok());
}

#[test]
fn fixed_point_of_post_intervention_value() {
    let ctx = context(EXCHANGE_RATE);
    let solver = Solver::new(&ctx);
    match solver.solve_gamma(5.077).unwrap() {
        GammaOutcome::Fixed(g) => {
            let expected = 0.0492 * (5.077 * 0.4f64.sqrt()).exp();
            assert!(rel(g, expected) < 0.01, "gamma = {g} vs {expected}");
            let v = solver.stopping_value(5.077, g);
            assert!((v - g).abs() <= 1e-8 * (1.0 + g.abs()));
        }
        other => panic!("unexpected {other:?}"),
    }
    let flat = context(FIXED_COST_ONLY);
    assert_eq!(
        Solver::new(&flat).solve_gamma(1.0).unwrap(),
        GammaOutcome::NoIntervention
    );
}

#[test]
fn stopping_value_contracts() {
    let ctx = context(EXCHANGE_RATE);
    let solver = Solver::new(&ctx);
    let g = 1.2;
    let base = solver.stopping_value(5.077, g);
    for d in [0.1, 1.0, 10.0] {
        let inc = solver.stopping_value(5.077, g + d) - base;
        assert!(inc >= -1e-12 && inc <= d + 1e-9, "Δ = {d}: {inc}");
    }
}

#[test]
fn pure_fixed_cost_never_intervenes() {
    let ctx = context(FIXED_COST_ONLY);
    let (out, value) = solve(&ctx).unwrap();
    assert!(out.policy.is_empty());
    for x in [-3.0, 0.0, 4.0] {
        assert_eq!(value.value(x), 0.0);
    }
}

#[test]
fn intervention_piece() {
    let ctx = context(EXCHANGE_RATE);
    let (out, value) = solve(&ctx).unwrap();
    let band = out.policy.bands[0];
    let vb = value.value(band.b);
    let left = value.continuation(band.b);
    assert!((vb - left).abs() <= 1e-9 * vb.abs());
    for x in [band.b + 0.5, band.b + 2.0, 17.0] {
        let lhs = value.value(x) - vb;
        let rhs = ctx.problem.k(x, band.a) - ctx.problem.k(band.b, band.a);
        assert!((lhs - rhs).abs() <= 1e-8 * vb.abs(), "at {x}");
        assert!((value.derivative(x) + 50.0).abs() < 1e-6);
    }
    let sf = value.smooth_fit(0);
    assert!(sf.gap <= 1e-3 * sf.left.abs());
}

#[test]
fn numeric_pair_reproduces_the_bands() {
    for (text, tol) in [(EXCHANGE_RATE, 1e-4), (DIVIDEND, 1e-4)] {
        let (exact_out, exact_v) = {
            let ctx = context(text);
            let (o, v) = solve(&ctx).unwrap();
            let probes: Vec<f64> = [0.3, 1.0, 4.0].iter().map(|&x| v.value(x)).collect();
            (o, probes)
        };
        let numeric = format!("{text}\npair = \"numeric\"\n");
        let ctx = context(&numeric);
        assert_eq!(
            ctx.pair.provenance(),
            impulse_core::fundamentals::Provenance::Numeric
        );
        let (out, v) = solve(&ctx).unwrap();
        let (e, n) = (exact_out.policy.bands[0], out.policy.bands[0]);
        assert!((e.a - n.a).abs() < tol, "a: {} vs {}", e.a, n.a);
        assert!((e.b - n.b).abs() < tol, "b: {} vs {}", e.b, n.b);
        for (x, ev) in [0.3, 1.0, 4.0].iter().zip(&exact_v) {
            assert!(
                (v.value(*x) - ev).abs() <= 1e-5 * ev.abs().max(1.0),
                "v({x})"
            );
        }
    }
}
