mod common;

use common::*;
use impulse_core::oracle::{concave_envelope, value_iteration, Oracle, OracleParams};
use impulse_core::solver::solve;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_envelope(points: &[(f64, f64)]) -> Vec<f64> {
    (0..points.len())
        .map(|i| {
            let y = points[i].0;
            let mut best = points[i].1;
            for j in 0..=i {
                for k in i..points.len() {
                    if j == k {
                        continue;
                    }
                    let (y0, v0) = points[j];
                    let (y1, v1) = points[k];
                    best = best.max(v0 + (y - y0) / (y1 - y0) * (v1 - v0));
                }
            }
            best
        })
        .collect()
}

#[test]
fn envelope_of_collinear_points_is_the_line() {
    let pts: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
    let env = concave_envelope(&pts).unwrap();
    for (e, p) in env.iter().zip(&pts) {
        assert!((e - p.1).abs() < 1e-12);
    }
}

#[test]
fn envelope_over_a_spike_is_two_chords() {
    let mut pts: Vec<(f64, f64)> = (0..11).map(|i| (i as f64, 0.0)).collect();
    pts[4].1 = 8.0;
    let env = concave_envelope(&pts).unwrap();
    for (i, e) in env.iter().enumerate() {
        let expected = if i <= 4 {
            2.0 * i as f64
        } else {
            8.0 * (10 - i) as f64 / 6.0
        };
        assert!((e - expected).abs() < 1e-12, "node {i}");
    }
}

#[test]
fn envelope_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut y = 0.0;
    let pts: Vec<(f64, f64)> = (0..100)
        .map(|_| {
            y += rng.random_range(0.05..1.0);
            (y, rng.random_range(-5.0..5.0))
        })
        .collect();
    let env = concave_envelope(&pts).unwrap();
    for (a, b) in env.iter().zip(brute_envelope(&pts)) {
        assert!((a - b).abs() < 1e-12);
    }
    assert!(concave_envelope(&pts[..1]).is_err());
}

#[test]
fn exchange_rate_iteration_matches_direct_line() {
    let ctx = context(EXCHANGE_RATE);
    let (out, value) = solve(&ctx).unwrap();
    let grid = value_iteration(&ctx).unwrap();
    assert!(grid.converged);
    assert!(*grid.changes.last().unwrap() <= 1e-6);
    let band = out.policy.bands[0];
    let beta = out.policy.beta;
    let fb = ctx.pair.f(band.b);
    let worst = grid
        .ys
        .iter()
        .zip(&grid.values)
        .filter(|(&y, _)| y <= fb)
        .map(|(&y, &v)| (v - beta * y).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-2 * beta * fb, "worst {worst}");

    let oracle = Oracle::new(&ctx, OracleParams::from_context(&ctx)).unwrap();
    for i in 0..40 {
        let x = -15.0 + (band.b + 15.0) * i as f64 / 39.0;
        let v = oracle.value(&grid, x);
        let d = value.value(x);
        assert!((v - d).abs() <= 1e-2 * d.abs(), "x = {x}: {v} vs {d}");
    }

    let cell = grid.ys.iter().position(|&y| y >= fb).unwrap();
    let width = grid.xs[cell] - grid.xs[cell - 1];
    assert!(!grid.triggers.is_empty());
    let t = grid.triggers[0];
    assert!(
        (t.x - band.b).abs() <= 2.0 * width,
        "trigger {} vs {}",
        t.x,
        band.b
    );
    assert!((t.target - band.a).abs() < 0.1);
}

#[test]
fn iterates_increase_and_solve_the_fixed_point() {
    let ctx = context(DIVIDEND);
    let grid = value_iteration(&ctx).unwrap();
    for pair in grid.snapshots.windows(2) {
        for (a, b) in pair[0].1.iter().zip(&pair[1].1) {
            assert!(b >= &(a - 1e-12 * a.abs().max(1.0)));
        }
    }
    let oracle = Oracle::new(&ctx, OracleParams::from_context(&ctx)).unwrap();
    let next = oracle.step(&grid.values);
    let scale = grid.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let gap = next
        .iter()
        .zip(&grid.values)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(gap <= 2.0 * 1e-6 * scale);
    let (out, _) = solve(&ctx).unwrap();
    let b = out.policy.bands[0].b;
    assert!(grid.triggers.iter().any(|t| (t.x - b).abs() < 0.01));
}

#[test]
fn intervention_operator_finds_the_quadratic_target() {
    let ctx = context(EXCHANGE_RATE);
    let oracle = Oracle::new(&ctx, OracleParams::from_context(&ctx)).unwrap();
    let zero = oracle.initial();
    let (_, targets) = oracle.intervention_with_targets(&zero);
    let i = oracle.xs().iter().position(|&x| x >= 12.261).unwrap();
    // argmax_y K̄(x, y) = argmax_y (50y − y²/0.2) = 5
    assert!((targets[i] - 5.0).abs() < 0.02, "target {}", targets[i]);

    let bumped: Vec<f64> = zero.iter().map(|v| v + 0.3).collect();
    let base = oracle.intervention(&zero);
    let raised = oracle.intervention(&bumped);
    for (lo, hi) in base.iter().zip(&raised).skip(1) {
        assert!(hi >= lo);
    }
}

#[test]
fn fixed_cost_only_stays_at_zero() {
    let ctx = context(FIXED_COST_ONLY);
    let grid = value_iteration(&ctx).unwrap();
    assert_eq!(grid.iterations, 1);
    assert!(grid.values.iter().all(|&v| v == 0.0));
    assert!(grid.triggers.is_empty());
}

#[test]
fn sine_reward_triggers_repeat() {
    let ctx = context(SINE);
    let grid = value_iteration(&ctx).unwrap();
    let four_pi = 4.0 * std::f64::consts::PI;
    for k in 0..3 {
        let b = 3.52 + four_pi * k as f64;
        assert!(
            grid.triggers.iter().any(|t| (t.x - b).abs() < 0.05),
            "no trigger near {b}: {:?}",
            grid.triggers
        );
    }
}
