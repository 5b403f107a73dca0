#![allow(dead_code)]

use impulse_core::load_problem;
use impulse_core::transform::TransformContext;

pub const EXCHANGE_RATE: &str = include_str!("../../../../configs/exchange_rate_bm.toml");
pub const DIVIDEND: &str = include_str!("../../../../configs/dividend_ou.toml");
pub const SINE: &str = include_str!("../../../../configs/sine_multiband.toml");

/// Brownian motion with a pure fixed cost: never worth intervening.
pub const FIXED_COST_ONLY: &str = r#"
[diffusion]
drift = "0"
vol = "1"
alpha = 0.2
lo = -inf
hi = inf
boundary = "natural"

[reward]
f = "0"
K = "-c"

[params]
c = 3.0
"#;

pub fn context(text: &str) -> TransformContext {
    TransformContext::new(load_problem(text).expect("config parses")).expect("context builds")
}

/// Replaces the value of `key` inside the config text.
pub fn with_line(text: &str, key: &str, value: &str) -> String {
    text.lines()
        .map(|l| {
            let t = l.trim_start();
            if t.starts_with(key) && t[key.len()..].trim_start().starts_with('=') {
                format!("{key} = {value}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}
