mod common;

use common::*;
use impulse_core::simulate::{policy_dominance, simulate_policy, SimConfig};
use impulse_core::solver::solve;
use impulse_core::{Band, BandPolicy};

fn band_policy(a: f64, b: f64) -> BandPolicy {
    BandPolicy::from_bands(vec![Band { a, b }])
}

#[test]
fn nothing_accrues_without_rewards() {
    let ctx = context(SINE);
    let cfg = SimConfig::new(2.0, 0.01, 10.0, 200, 1);
    let est = simulate_policy(&ctx, &BandPolicy::empty(ctx.f_lo, ctx.d), &cfg).unwrap();
    assert_eq!(est.estimate, 0.0);
    assert_eq!(est.std_error, 0.0);
}

#[test]
fn seeded_runs_are_bit_identical() {
    let ctx = context(EXCHANGE_RATE);
    let policy = band_policy(5.077, 12.261);
    for n in [1, 64] {
        let cfg = SimConfig::new(0.0, 1e-2, 20.0, n, 42);
        let a = simulate_policy(&ctx, &policy, &cfg).unwrap();
        let b = simulate_policy(&ctx, &policy, &cfg).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }
    let other = simulate_policy(&ctx, &policy, &SimConfig::new(0.0, 1e-2, 20.0, 64, 43)).unwrap();
    let base = simulate_policy(&ctx, &policy, &SimConfig::new(0.0, 1e-2, 20.0, 64, 42)).unwrap();
    assert_ne!(other.estimate, base.estimate);
}

#[test]
fn identical_policies_tie_exactly() {
    let ctx = context(EXCHANGE_RATE);
    let policy = band_policy(5.077, 12.261);
    let cfg = SimConfig::new(0.0, 1e-2, 30.0, 200, 5);
    let rep = policy_dominance(&ctx, &policy, &policy, &cfg).unwrap();
    assert_eq!(rep.optimal.estimate, rep.alternative.estimate);
    assert_eq!(rep.paired_se, 0.0);
    assert!(rep.dominated);
}

#[test]
fn invalid_settings_are_rejected() {
    let ctx = context(EXCHANGE_RATE);
    let policy = band_policy(5.077, 12.261);
    assert!(simulate_policy(&ctx, &policy, &SimConfig::new(0.0, 0.0, 1.0, 10, 1)).is_err());
    assert!(simulate_policy(&ctx, &policy, &SimConfig::new(0.0, 10.0, 100.0, 10, 1)).is_err());
    assert!(simulate_policy(&ctx, &policy, &SimConfig::new(0.0, 0.1, 1.0, 0, 1)).is_err());
}

#[test]
fn exchange_rate_alternative_band_is_no_better() {
    let ctx = context(EXCHANGE_RATE);
    let (out, _) = solve(&ctx).unwrap();
    let cfg = SimConfig::new(0.0, 2e-3, 60.0, 2000, 11);
    let rep = policy_dominance(&ctx, &out.policy, &band_policy(4.0, 11.0), &cfg).unwrap();
    assert!(rep.dominated, "{rep:?}");
}

#[test]
fn start_beyond_trigger_intervenes_immediately() {
    let ctx = context(EXCHANGE_RATE);
    let (_, value) = solve(&ctx).unwrap();
    let cfg = SimConfig::new(15.0, 2e-3, 60.0, 4000, 3);
    let est = simulate_policy(&ctx, &value.policy, &cfg).unwrap();
    let v = value.value(15.0);
    assert!(
        (est.estimate - v).abs() <= 3.0 * est.std_error,
        "{est:?} vs {v}"
    );
}

#[test]
fn dividend_value_matches_direct_solution() {
    let ctx = context(DIVIDEND);
    let (_, value) = solve(&ctx).unwrap();
    let cfg = SimConfig::new(0.4, 1e-3, 132.0, 10_000, 7);
    let est = simulate_policy(&ctx, &value.policy, &cfg).unwrap();
    let v = value.value(0.4);
    assert!(
        (est.estimate - v).abs() <= 3.0 * est.std_error,
        "{est:?} vs {v}"
    );
    assert!(est.estimate <= v + 3.0 * est.std_error);
}

#[test]
fn multiband_policy_beats_single_band() {
    let ctx = context(SINE);
    let (out, _) = solve(&ctx).unwrap();
    let cfg = SimConfig::new(10.0, 1e-2, 4000.0, 400, 13);
    let rep = policy_dominance(&ctx, &out.policy, &band_policy(2.75, 3.52), &cfg).unwrap();
    assert!(rep.dominated, "{rep:?}");
    assert!(rep.optimal.estimate > rep.alternative.estimate);
}

#[test]
fn halving_the_step_is_consistent() {
    let ctx = context(EXCHANGE_RATE);
    let (out, _) = solve(&ctx).unwrap();
    let coarse = simulate_policy(
        &ctx,
        &out.policy,
        &SimConfig::new(0.0, 2e-3, 60.0, 4000, 21),
    )
    .unwrap();
    let fine = simulate_policy(
        &ctx,
        &out.policy,
        &SimConfig::new(0.0, 1e-3, 60.0, 4000, 21),
    )
    .unwrap();
    let pooled = (coarse.std_error.powi(2) + fine.std_error.powi(2)).sqrt();
    assert!(
        (coarse.estimate - fine.estimate).abs() < 2.0 * pooled,
        "{coarse:?} vs {fine:?}"
    );
}
