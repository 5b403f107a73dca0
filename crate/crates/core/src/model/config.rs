use std::collections::{BTreeMap, HashMap};

use serde::Deserialize;

use super::{Boundary, DiffusionSpec, Expr, ImpulseProblem, SolverSettings};
use crate::error::ConfigError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    diffusion: Option<RawDiffusion>,
    reward: Option<RawReward>,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    #[serde(default)]
    solver: SolverSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDiffusion {
    drift: Option<String>,
    vol: Option<String>,
    alpha: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
    boundary: Option<String>,
    penalty: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawReward {
    f: Option<String>,
    K: Option<String>,
}

const RESERVED: [&str; 9] = ["x", "y", "exp", "log", "sin", "cos", "sqrt", "abs", "pi"];

fn required<T>(value: Option<T>, name: &str) -> Result<T, ConfigError> {
    value.ok_or_else(|| ConfigError::MissingField(name.to_string()))
}

fn parse_field(
    field: &str,
    text: &str,
    vars: &[&str],
    params: &HashMap<String, f64>,
) -> Result<Expr, ConfigError> {
    Expr::parse(text, vars, params).map_err(|source| ConfigError::Expr {
        field: field.to_string(),
        source,
    })
}

/// Parses and validates a problem description in the keyed-section format:
///
/// ```toml
/// [diffusion]
/// drift = "0"
/// vol = "1"
/// alpha = 0.2
/// lo = -inf
/// hi = inf
/// boundary = "natural"
///
/// [reward]
/// f = "-x^2"
/// K = "-c - lambda*(x - y)"
///
/// [params]
/// c = 150
/// lambda = 50
/// ```
pub fn load_problem(config_text: &str) -> Result<ImpulseProblem, ConfigError> {
    let raw: RawConfig =
        toml::from_str(config_text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    let diffusion = required(raw.diffusion, "diffusion")?;
    let reward = required(raw.reward, "reward")?;

    for name in raw.params.keys() {
        if RESERVED.contains(&name.as_str()) {
            return Err(ConfigError::InvalidValue {
                field: format!("params.{name}"),
                msg: "name is reserved".into(),
            });
        }
    }
    let params: HashMap<String, f64> = raw.params.into_iter().collect();

    let drift = parse_field(
        "diffusion.drift",
        &required(diffusion.drift, "diffusion.drift")?,
        &["x"],
        &params,
    )?;
    let vol = parse_field(
        "diffusion.vol",
        &required(diffusion.vol, "diffusion.vol")?,
        &["x"],
        &params,
    )?;
    let alpha = required(diffusion.alpha, "diffusion.alpha")?;
    let lo = diffusion.lo.unwrap_or(f64::NEG_INFINITY);
    let hi = diffusion.hi.unwrap_or(f64::INFINITY);
    let boundary = match diffusion.boundary.as_deref().unwrap_or("natural") {
        "natural" => Boundary::Natural,
        "absorbing" => Boundary::Absorbing {
            penalty: diffusion.penalty.unwrap_or(0.0),
        },
        other => {
            return Err(ConfigError::InvalidValue {
                field: "diffusion.boundary".into(),
                msg: format!("expected \"natural\" or \"absorbing\", got \"{other}\""),
            })
        }
    };
    let running = parse_field(
        "reward.f",
        &required(reward.f, "reward.f")?,
        &["x"],
        &params,
    )?;
    let intervention = parse_field(
        "reward.K",
        &required(reward.K, "reward.K")?,
        &["x", "y"],
        &params,
    )?;

    ImpulseProblem::new(
        DiffusionSpec {
            drift,
            vol,
            alpha,
            lo,
            hi,
            boundary,
        },
        running,
        intervention,
        raw.solver,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const BM: &str = r#"
[diffusion]
drift = "0"
vol = "1"
alpha = 0.2
lo = -inf
hi = inf
boundary = "natural"

[reward]
f = "-x^2"
K = "-c - lambda*(x - y)"

[params]
c = 150
lambda = 50
"#;

    const OU: &str = r#"
[diffusion]
drift = "delta*(m - x)"
vol = "sigma"
alpha = 0.105
lo = 0
boundary = "absorbing"
penalty = 0.0

[reward]
f = "0"
K = "k*(x - y)^gamma - Kfix"

[params]
k = 0.7
Kfix = 0.1
gamma = 0.75
delta = 0.1
m = 0.9
sigma = 0.35
"#;

    #[test]
    fn loads_brownian_problem() {
        let p = load_problem(BM).unwrap();
        assert_eq!(p.diffusion.alpha, 0.2);
        assert_eq!(p.diffusion.boundary, Boundary::Natural);
        assert_eq!(p.truncation(), (-20.0, 20.0));
        assert!((p.k(12.261, 5.077) + 509.2).abs() < 1e-9);
        assert_eq!(p.f(3.0), -9.0);
    }

    #[test]
    fn loads_ou_problem() {
        let p = load_problem(OU).unwrap();
        assert_eq!(p.diffusion.boundary, Boundary::Absorbing { penalty: 0.0 });
        assert_eq!(p.truncation(), (0.0, 20.0));
        assert!((p.diffusion.mu(0.0) - 0.09).abs() < 1e-15);
        assert_eq!(p.diffusion.vol.as_constant(), Some(0.35));
    }

    #[test]
    fn rejects_nonnegative_fixed_cost() {
        let text = BM.replace("-c - lambda*(x - y)", "0");
        match load_problem(&text) {
            Err(ConfigError::Invariant { what, x, .. }) => {
                assert!(what.contains("K(x,x)"));
                assert!(x > -20.0 && x < 20.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_fields_and_bad_values() {
        let text = BM.replace("alpha = 0.2\n", "");
        assert!(matches!(
            load_problem(&text),
            Err(ConfigError::MissingField(f)) if f == "diffusion.alpha"
        ));
        let text = BM.replace("vol = \"1\"", "vol = \"x\"");
        assert!(matches!(
            load_problem(&text),
            Err(ConfigError::Invariant { .. })
        ));
        let text = BM.replace("alpha = 0.2", "alpha = -1.0");
        assert!(matches!(
            load_problem(&text),
            Err(ConfigError::InvalidValue { .. })
        ));
        let text = BM.replace("lambda*(x - y)", "lambda*(x - q)");
        assert!(matches!(load_problem(&text), Err(ConfigError::Expr { .. })));
        assert!(matches!(
            load_problem("[diffusion"),
            Err(ConfigError::Parse(_))
        ));
        let text = format!("{BM}\n[solver]\ndirection = \"both\"\n");
        assert!(matches!(
            load_problem(&text),
            Err(ConfigError::InvalidValue { .. })
        ));
        let text = BM.replace("lambda = 50", "lambda = 50\nx = 1");
        assert!(matches!(
            load_problem(&text),
            Err(ConfigError::InvalidValue { .. })
        ));
    }

    #[test]
    fn solver_overrides() {
        let text = format!("{BM}\n[solver]\nx_max = 30.0\noracle_hi = 14.0\nscan_points = 50\n");
        let p = load_problem(&text).unwrap();
        assert_eq!(p.truncation(), (-20.0, 30.0));
        assert_eq!(p.settings.oracle_hi, Some(14.0));
        assert_eq!(p.settings.scan_points, 50);
        assert_eq!(p.settings.oracle_nodes, 2000);
    }
}
