use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

fn impulse(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulse"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn report(out: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn malformed_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[diffusion]\ndrift = \"x +\"\n").unwrap();
    let out = dir.path().join("out");
    for cmd in ["solve", "iterate", "check"] {
        let o = impulse(&out, &[cmd, bad.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{cmd}");
        assert!(!o.stderr.is_empty());
        assert!(!out.exists());
    }
}

#[test]
fn solve_reports_reference_bands() {
    let dir = tempfile::tempdir().unwrap();
    for (name, expected) in [
        ("exchange_rate_bm.toml", [5.077, 12.261, 0.0492]),
        ("dividend_ou.toml", [0.2192, 0.6220, 0.5749]),
    ] {
        let out = dir.path().join(name);
        let o = impulse(&out, &["solve", config(name).to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let r = report(&out);
        let band = &r["policy"]["bands"][0];
        let got = [
            band["a"].as_f64().unwrap(),
            band["b"].as_f64().unwrap(),
            r["policy"]["beta"].as_f64().unwrap(),
        ];
        for (g, e) in got.iter().zip(expected) {
            assert!(rel(*g, e) < 0.01, "{name}: {got:?}");
        }
        let value = fs::read_to_string(out.join("value.csv")).unwrap();
        assert_eq!(value.lines().next(), Some("x,v,dv"));
        assert_eq!(value.lines().count(), 1001);
        for file in ["beta_scan.csv", "majorant.csv"] {
            assert!(out.join(file).exists());
        }
    }
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("exchange_rate_bm.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(impulse(out, &["solve", cfg]).status.success());
        assert!(impulse(out, &["--grid", "400", "iterate", cfg])
            .status
            .success());
        let sim = [
            "--seed", "9", "simulate", cfg, "--a", "5", "--b", "12", "--paths", "1", "--dt", "0.01",
        ];
        assert!(impulse(out, &sim).status.success());
    }
    for file in [
        "value.csv",
        "beta_scan.csv",
        "oracle.csv",
        "triggers.csv",
        "estimates.csv",
    ] {
        let x = fs::read(a.join(file)).unwrap();
        let y = fs::read(b.join(file)).unwrap();
        assert_eq!(x, y, "{file}");
    }
    assert_eq!(report(&a)["config_hash"], report(&b)["config_hash"]);
    let est = fs::read_to_string(a.join("estimates.csv")).unwrap();
    assert!(est.starts_with("# seed: 9\n# generator: "));
}

#[test]
fn simulate_needs_a_policy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("exchange_rate_bm.toml");
    let o = impulse(dir.path(), &["simulate", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let o = impulse(
        dir.path(),
        &[
            "simulate",
            cfg.to_str().unwrap(),
            "--policy",
            "/nonexistent/report.json",
        ],
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn simulate_from_report_matches_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("exchange_rate_bm.toml");
    let cfg = cfg.to_str().unwrap();
    let solved = dir.path().join("solve");
    assert!(impulse(&solved, &["solve", cfg]).status.success());
    let report_path = solved.join("report.json");
    let out = dir.path().join("sim");
    let o = impulse(
        &out,
        &[
            "simulate",
            cfg,
            "--policy",
            report_path.to_str().unwrap(),
            "--paths",
            "2000",
            "--dt",
            "2e-3",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("estimates.csv")).unwrap();
    let row: Vec<f64> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .nth(1)
        .unwrap()
        .split(',')
        .map(|f| f.parse().unwrap())
        .collect();
    assert_eq!(row[3], 2000.0);
    assert!((row[1] + 24.9508).abs() <= 3.0 * row[2], "{row:?}");
}

#[test]
fn iterate_fixed_cost_converges_at_once_and_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let flat = dir.path().join("flat.toml");
    fs::write(
        &flat,
        "[diffusion]\ndrift = \"0\"\nvol = \"1\"\nalpha = 0.2\n\n[reward]\nf = \"0\"\nK = \"-3\"\n",
    )
    .unwrap();
    let out = dir.path().join("it");
    assert!(impulse(&out, &["iterate", flat.to_str().unwrap()])
        .status
        .success());
    let conv = fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 2);
    let triggers = fs::read_to_string(out.join("triggers.csv")).unwrap();
    assert_eq!(triggers.trim(), "x,y,target");

    let check = impulse(
        &dir.path().join("check"),
        &["check", config("exchange_rate_bm.toml").to_str().unwrap()],
    );
    assert_eq!(check.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&check.stdout).contains("PASS"));
}
