//! `impulse`: solve, iterate, simulate and check impulse control problems
//! described by TOML config files, writing JSON reports and CSV plot data.

use std::fmt::Display;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use impulse_core::checks::{
    hermite_derivative, parabolic_closed_form, property_suite, CheckOutcome,
};
use impulse_core::oracle::{Oracle, OracleParams};
use impulse_core::simulate::{simulate_policy, SimConfig, SimEstimate, GENERATOR};
use impulse_core::solver::{solve, SolveOutcome, StageResult};
use impulse_core::transform::TransformContext;
use impulse_core::{load_problem, Band, BandPolicy};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const VALUE_POINTS: usize = 1000;
const MAJORANT_POINTS: usize = 500;

#[derive(Parser)]
#[command(
    name = "impulse",
    version,
    about = "Optimal band policies for impulse control of diffusions"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Random seed for simulation and randomized checks.
    #[arg(long, global = true, default_value_t = 20240601)]
    seed: u64,
    /// Value-iteration grid size; overrides the config.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Value-iteration tolerance; overrides the config.
    #[arg(long, global = true)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the optimal band policy and value function.
    Solve { config: PathBuf },
    /// Run value iteration on the transformed grid.
    Iterate { config: PathBuf },
    /// Estimate a policy's value by Monte Carlo.
    Simulate(SimulateArgs),
    /// Run the property suite and special-function checks.
    Check { config: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    /// Report written by `solve` to take the policy from.
    #[arg(long, conflicts_with_all = ["a", "b"])]
    policy: Option<PathBuf>,
    /// Target of a single-band policy.
    #[arg(long, requires = "b", allow_hyphen_values = true)]
    a: Option<f64>,
    /// Trigger of a single-band policy.
    #[arg(long, requires = "a", allow_hyphen_values = true)]
    b: Option<f64>,
    /// Starting points, comma separated.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        default_value = "0"
    )]
    x0: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    dt: f64,
    /// Simulation horizon; defaults to the time at which discounting falls below 1e-6.
    #[arg(long)]
    horizon: Option<f64>,
}

/// An error together with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CliResult<T> = Result<T, Failure>;

trait Classify<T> {
    fn config_err(self) -> CliResult<T>;
    fn solver_err(self) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn config_err(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })
    }
    fn solver_err(self) -> CliResult<T> {
        self.map_err(|e| Failure {
            code: 2,
            error: e.into(),
        })
    }
}

#[derive(Serialize)]
struct RunReport {
    version: &'static str,
    config_path: String,
    config_hash: String,
    config: String,
    policy: BandPolicy,
    stages: Vec<StageResult>,
    warnings: Vec<String>,
    value_samples: Vec<ValueSample>,
    smooth_fit: Vec<f64>,
    timings: Timings,
}

#[derive(Clone, Serialize)]
struct ValueSample {
    x: f64,
    value: f64,
    derivative: f64,
}

#[derive(Serialize)]
struct Timings {
    solve_seconds: f64,
}

#[derive(Deserialize)]
struct PolicyReport {
    policy: BandPolicy,
}

struct Loaded {
    text: String,
    hash: String,
    ctx: TransformContext,
}

fn load(path: &Path, global: &Global) -> CliResult<Loaded> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config_err()?;
    let mut problem = load_problem(&text).config_err()?;
    if let Some(n) = global.grid {
        if n < 2 {
            return Err(anyhow!("--grid must be at least 2")).config_err();
        }
        problem.settings.oracle_nodes = n;
    }
    if let Some(tol) = global.tol {
        if !(tol > 0.0) {
            return Err(anyhow!("--tol must be positive")).config_err();
        }
        problem.settings.oracle_tol = tol;
    }
    let ctx = TransformContext::new(problem).solver_err()?;
    let hash = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(Loaded { text, hash, ctx })
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> anyhow::Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_rows<I, R, S>(path: &Path, header: &[&str], rows: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

fn prepare_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .solver_err()
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

fn cmd_solve(config: &Path, global: &Global) -> CliResult<()> {
    let loaded = load(config, global)?;
    let ctx = &loaded.ctx;
    let start = Instant::now();
    let (outcome, value) = solve(ctx).solver_err()?;
    let elapsed = start.elapsed().as_secs_f64();
    prepare_out(&global.out)?;

    let samples: Vec<ValueSample> = linspace(ctx.x_min, ctx.x_max, VALUE_POINTS)
        .map(|x| ValueSample {
            x,
            value: value.value(x),
            derivative: value.derivative(x),
        })
        .collect();
    let report = RunReport {
        version: env!("CARGO_PKG_VERSION"),
        config_path: config.display().to_string(),
        config_hash: loaded.hash.clone(),
        config: loaded.text.clone(),
        policy: outcome.policy.clone(),
        stages: outcome.stages.clone(),
        warnings: outcome.warnings.clone(),
        value_samples: samples.iter().step_by(VALUE_POINTS / 20).cloned().collect(),
        smooth_fit: (0..outcome.policy.bands.len())
            .map(|k| value.smooth_fit(k).gap)
            .collect(),
        timings: Timings {
            solve_seconds: elapsed,
        },
    };
    let out = &global.out;
    let json = serde_json::to_string_pretty(&report).solver_err()?;
    fs::write(out.join("report.json"), json).solver_err()?;
    write_rows(
        &out.join("value.csv"),
        &["x", "v", "dv"],
        samples
            .iter()
            .map(|s| [num(s.x), num(s.value), num(s.derivative)]),
    )
    .solver_err()?;
    write_rows(
        &out.join("beta_scan.csv"),
        &["a", "beta"],
        outcome
            .scan
            .iter()
            .map(|&(a, b)| [num(a), b.map(num).unwrap_or_default()]),
    )
    .solver_err()?;
    write_majorant(ctx, &outcome, &out.join("majorant.csv")).solver_err()?;

    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    print_policy(&outcome.policy);
    Ok(())
}

/// The continuation line `βΨ + Dφ` against the shifted reward
/// `K̄(x, a) + βΨ(a) + Dφ(a)` for each band's target.
fn write_majorant(
    ctx: &TransformContext,
    outcome: &SolveOutcome,
    path: &Path,
) -> anyhow::Result<()> {
    let beta = outcome.policy.beta;
    let mut rows = Vec::new();
    for (k, band) in outcome.policy.bands.iter().enumerate() {
        let gamma = ctx.line_value(beta, band.a);
        let hi = (band.b + 2.0 * (band.b - band.a)).min(ctx.x_max);
        for x in linspace(band.a, hi, MAJORANT_POINTS) {
            rows.push([
                k.to_string(),
                num(x),
                num(ctx.line_value(beta, x)),
                num(ctx.reward(x, band.a) + gamma),
            ]);
        }
    }
    write_rows(path, &["band", "x", "line", "shifted_reward"], rows)
}

fn print_policy(policy: &BandPolicy) {
    println!("beta* = {}", policy.beta);
    for (k, band) in policy.bands.iter().enumerate() {
        println!("band {k}: a* = {}, b* = {}", band.a, band.b);
    }
    if policy.bands.is_empty() {
        println!("no intervention is optimal");
    }
}

fn cmd_iterate(config: &Path, global: &Global) -> CliResult<()> {
    let loaded = load(config, global)?;
    let ctx = &loaded.ctx;
    let oracle = Oracle::new(ctx, OracleParams::from_context(ctx)).solver_err()?;
    let grid = oracle.run(impulse_core::oracle::is_logged_iteration);
    prepare_out(&global.out)?;
    let out = &global.out;

    let rows = grid.snapshots.iter().flat_map(|(n, values)| {
        grid.ys
            .iter()
            .zip(&grid.xs)
            .zip(values)
            .map(move |((&y, &x), &v)| [n.to_string(), num(y), num(x), num(v)])
    });
    write_rows(
        &out.join("oracle.csv"),
        &["iteration", "y", "x", "phi"],
        rows,
    )
    .solver_err()?;
    write_rows(
        &out.join("convergence.csv"),
        &["iteration", "change"],
        grid.changes
            .iter()
            .enumerate()
            .map(|(i, &c)| [(i + 1).to_string(), num(c)]),
    )
    .solver_err()?;
    write_rows(
        &out.join("triggers.csv"),
        &["x", "y", "target"],
        grid.triggers
            .iter()
            .map(|t| [num(t.x), num(t.y), num(t.target)]),
    )
    .solver_err()?;

    let last = grid.changes.last().copied().unwrap_or(f64::NAN);
    println!("{} iterations, final change {last:e}", grid.iterations);
    for t in &grid.triggers {
        println!("trigger x = {:.6}, target {:.6}", t.x, t.target);
    }
    if !grid.converged {
        return Err(anyhow!(
            "no convergence after {} iterations (last change {last:e})",
            grid.iterations
        ))
        .solver_err();
    }
    Ok(())
}

fn read_policy(args: &SimulateArgs, ctx: &TransformContext) -> CliResult<BandPolicy> {
    match (&args.policy, args.a, args.b) {
        (Some(path), _, _) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .config_err()?;
            let report: PolicyReport = serde_json::from_str(&text)
                .with_context(|| format!("no policy in {}", path.display()))
                .config_err()?;
            report
                .policy
                .check_ordering(ctx.problem.diffusion.lo)
                .map_err(|e| anyhow!(e))
                .config_err()?;
            Ok(report.policy)
        }
        (None, Some(a), Some(b)) => {
            if !(a < b) {
                return Err(anyhow!("target {a} must lie below trigger {b}")).config_err();
            }
            Ok(BandPolicy::from_bands(vec![Band { a, b }]))
        }
        _ => Err(anyhow!(
            "a policy is required: pass --policy REPORT or --a A --b B"
        ))
        .config_err(),
    }
}

fn cmd_simulate(args: &SimulateArgs, global: &Global) -> CliResult<()> {
    let loaded = load(&args.config, global)?;
    let ctx = &loaded.ctx;
    let policy = read_policy(args, ctx)?;
    let alpha = ctx.alpha();
    let horizon = args.horizon.unwrap_or(if alpha > 0.0 {
        1e6f64.ln() / alpha
    } else {
        1000.0
    });
    let mut estimates: Vec<(f64, SimEstimate)> = Vec::new();
    for &x0 in &args.x0 {
        let cfg = SimConfig::new(x0, args.dt, horizon, args.paths, global.seed);
        let est = simulate_policy(ctx, &policy, &cfg).config_err()?;
        if est.censored > 0 {
            eprintln!("warning: {} paths censored at x0 = {x0}", est.censored);
        }
        println!("x0 = {x0}: {} ± {}", est.estimate, est.std_error);
        estimates.push((x0, est));
    }
    prepare_out(&global.out)?;
    let path = global.out.join("estimates.csv");
    let write = || -> anyhow::Result<()> {
        let mut file = BufWriter::new(File::create(&path)?);
        writeln!(file, "# seed: {}", global.seed)?;
        writeln!(file, "# generator: {GENERATOR}")?;
        writeln!(
            file,
            "# dt: {}, horizon: {horizon}, config sha256: {}",
            args.dt, loaded.hash
        )?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["x0", "estimate", "std_error", "n_paths"])?;
        for (x0, est) in &estimates {
            w.write_record([
                num(*x0),
                num(est.estimate),
                num(est.std_error),
                est.n_paths.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    write().solver_err()
}

fn cmd_check(config: &Path, global: &Global) -> CliResult<()> {
    let loaded = load(config, global)?;
    let ctx = &loaded.ctx;
    let (outcome, value) = solve(ctx).solver_err()?;
    let mut checks = property_suite(ctx, &outcome, &value, global.seed);
    checks.push(parabolic_closed_form(1e-8));
    checks.push(hermite_derivative(1e-5));
    prepare_out(&global.out)?;
    write_rows(
        &global.out.join("checks.csv"),
        &["name", "passed", "worst", "tol"],
        checks.iter().map(|c| {
            [
                c.name.clone(),
                c.passed.to_string(),
                num(c.worst),
                num(c.tol),
            ]
        }),
    )
    .solver_err()?;
    for c in &checks {
        println!(
            "{}: {} (worst {:.3e}, tol {:.0e}) {}",
            c.name,
            verdict(c),
            c.worst,
            c.tol,
            c.detail
        );
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(Failure {
            code: 3,
            error: anyhow!("{failed} checks failed"),
        });
    }
    Ok(())
}

fn verdict(c: &CheckOutcome) -> impl Display {
    if c.passed {
        "PASS"
    } else {
        "FAIL"
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(value) = std::env::var("IMPULSE_THREADS") {
        let n: usize = value.parse().with_context(|| {
            format!("IMPULSE_THREADS must be a positive integer, got {value:?}")
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads().config_err()?;
    let g = &cli.global;
    match &cli.command {
        Command::Solve { config } => cmd_solve(config, g),
        Command::Iterate { config } => cmd_iterate(config, g),
        Command::Simulate(args) => cmd_simulate(args, g),
        Command::Check { config } => cmd_check(config, g),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
