//! Monte Carlo evaluation of band policies by Euler–Maruyama.
//!
//! Each path draws from its own ChaCha8 stream (`seed`, stream = path index),
//! so results do not depend on scheduling, and the per-path payoffs are
//! combined by pairwise summation in path order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Result, SolveError};
use crate::model::{BandPolicy, Expr};
use crate::numerics::pairwise_sum;
use crate::transform::TransformContext;

/// Name of the generator recorded in output headers.
pub const GENERATOR: &str = "ChaCha8 (rand_chacha), one stream per path";

/// Default bound on `|X|` beyond which a path is censored.
pub const CENSOR_BOUND: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub x0: f64,
    pub dt: f64,
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Paths with `|X|` above this are dropped and counted as censored.
    pub censor_bound: f64,
}

impl SimConfig {
    pub fn new(x0: f64, dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        SimConfig {
            x0,
            dt,
            horizon,
            n_paths,
            seed,
            censor_bound: CENSOR_BOUND,
        }
    }

    /// Checks `dt > 0`, `T > 0`, `n ≥ 1` and `αdt < 1`.
    pub fn validate(&self, alpha: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.n_paths > 0) {
            return Err(SolveError::IllPosed(
                "simulation needs dt > 0, horizon > 0 and at least one path".into(),
            ));
        }
        if alpha * self.dt >= 1.0 {
            return Err(SolveError::IllPosed(format!(
                "time step {} is not small against the discount rate {alpha}",
                self.dt
            )));
        }
        Ok(())
    }
}

/// Sample mean and standard error of the discounted payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub censored: usize,
    /// `e^(−αT)`: weight of everything after the horizon.
    pub horizon_tail: f64,
}

/// Estimates under two policies driven by the same random numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DominanceReport {
    pub optimal: SimEstimate,
    pub alternative: SimEstimate,
    /// `√(se_opt² + se_alt²)`.
    pub pooled_se: f64,
    /// Standard error of the path-wise difference.
    pub paired_se: f64,
    /// `J(alt) ≤ J(opt) + 3·pooled_se`.
    pub dominated: bool,
}

enum Coef<'a> {
    Const(f64),
    Var(&'a Expr),
}

impl<'a> Coef<'a> {
    fn new(e: &'a Expr) -> Self {
        e.as_constant().map_or(Coef::Var(e), Coef::Const)
    }

    #[inline]
    fn at(&self, x: f64) -> f64 {
        match self {
            Coef::Const(v) => *v,
            Coef::Var(e) => e.eval1_or_nan(x),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Coef::Const(v) if *v == 0.0)
    }
}

enum PathEnd {
    Done(f64),
    Censored,
}

struct PathModel<'a> {
    ctx: &'a TransformContext,
    drift: Coef<'a>,
    vol: Coef<'a>,
    running: Coef<'a>,
    bands: Vec<(f64, f64)>,
    alpha: f64,
    absorbing: Option<(f64, f64)>,
}

impl<'a> PathModel<'a> {
    fn new(ctx: &'a TransformContext, policy: &BandPolicy) -> Self {
        let p = &ctx.problem;
        let d = &p.diffusion;
        PathModel {
            ctx,
            drift: Coef::new(&d.drift),
            vol: Coef::new(&d.vol),
            running: Coef::new(&p.running),
            bands: policy.bands.iter().map(|b| (b.a, b.b)).collect(),
            alpha: d.alpha,
            absorbing: d.is_absorbing().then(|| (d.lo, d.penalty())),
        }
    }

    fn run(&self, cfg: &SimConfig, index: u64) -> PathEnd {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(index);
        let k = |x: f64, y: f64| self.ctx.problem.k(x, y);
        let dt = cfg.dt;
        let sqrt_dt = dt.sqrt();
        let steps = (cfg.horizon / dt).ceil() as usize;
        let step_discount = (-self.alpha * dt).exp();
        let reward_weight = if self.alpha > 0.0 {
            (1.0 - step_discount) / self.alpha
        } else {
            dt
        };
        let with_running = !self.running.is_zero();

        let mut x = cfg.x0;
        let mut total = 0.0;
        let mut discount = 1.0;
        let mut t = 0.0;

        if let Some((lo, penalty)) = self.absorbing {
            if x <= lo {
                return PathEnd::Done(penalty);
            }
        }
        if let Some(&(a, b)) = self.bands.last() {
            if x > b {
                total += k(x, a);
                x = a;
            }
        }

        for _ in 0..steps {
            if with_running {
                total += discount * reward_weight * self.running.at(x);
            }
            let z: f64 = StandardNormal.sample(&mut rng);
            let next = x + self.drift.at(x) * dt + self.vol.at(x) * sqrt_dt * z;

            if let Some((lo, penalty)) = self.absorbing {
                if next <= lo {
                    let theta = (x - lo) / (x - next);
                    total += (-self.alpha * (t + theta * dt)).exp() * penalty;
                    return PathEnd::Done(total);
                }
            }

            let mut crossed: Option<(f64, f64, f64)> = None;
            for &(a, b) in &self.bands {
                let hit = x < b && next >= b;
                if hit {
                    let theta = (b - x) / (next - x);
                    if crossed.is_none_or(|c| theta < c.0) {
                        crossed = Some((theta, a, b));
                    }
                }
            }
            t += dt;
            discount *= step_discount;
            match crossed {
                Some((theta, a, b)) => {
                    let when = t - dt + theta * dt;
                    total += (-self.alpha * when).exp() * k(b, a);
                    x = a;
                }
                None => x = next,
            }
            if !(x.abs() <= cfg.censor_bound) {
                return PathEnd::Censored;
            }
        }
        PathEnd::Done(total)
    }
}

fn payoffs(ctx: &TransformContext, policy: &BandPolicy, cfg: &SimConfig) -> Vec<PathEnd> {
    let model = PathModel::new(ctx, policy);
    (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| model.run(cfg, i))
        .collect()
}

fn summarize(values: &[f64], n_paths: usize, censored: usize, tail: f64) -> SimEstimate {
    let n = values.len();
    if n == 0 {
        return SimEstimate {
            estimate: f64::NAN,
            std_error: f64::NAN,
            n_paths,
            censored,
            horizon_tail: tail,
        };
    }
    let mean = pairwise_sum(values) / n as f64;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if n > 1 {
        pairwise_sum(&sq) / (n - 1) as f64
    } else {
        0.0
    };
    SimEstimate {
        estimate: mean,
        std_error: (var / n as f64).sqrt(),
        n_paths,
        censored,
        horizon_tail: tail,
    }
}

/// Estimates the expected discounted payoff of `policy` from `cfg.x0`.
pub fn simulate_policy(
    ctx: &TransformContext,
    policy: &BandPolicy,
    cfg: &SimConfig,
) -> Result<SimEstimate> {
    cfg.validate(ctx.alpha())?;
    let ends = payoffs(ctx, policy, cfg);
    let values: Vec<f64> = ends
        .iter()
        .filter_map(|e| match e {
            PathEnd::Done(v) => Some(*v),
            PathEnd::Censored => None,
        })
        .collect();
    let censored = ends.len() - values.len();
    let tail = (-ctx.alpha() * cfg.horizon).exp();
    Ok(summarize(&values, cfg.n_paths, censored, tail))
}

/// Compares two policies under common random numbers.
pub fn policy_dominance(
    ctx: &TransformContext,
    optimal: &BandPolicy,
    alternative: &BandPolicy,
    cfg: &SimConfig,
) -> Result<DominanceReport> {
    cfg.validate(ctx.alpha())?;
    let a = payoffs(ctx, optimal, cfg);
    let b = payoffs(ctx, alternative, cfg);
    let mut va = Vec::with_capacity(a.len());
    let mut vb = Vec::with_capacity(b.len());
    let mut diff = Vec::with_capacity(a.len());
    let (mut ca, mut cb) = (0, 0);
    for (x, y) in a.iter().zip(&b) {
        match x {
            PathEnd::Done(v) => va.push(*v),
            PathEnd::Censored => ca += 1,
        }
        match y {
            PathEnd::Done(v) => vb.push(*v),
            PathEnd::Censored => cb += 1,
        }
        if let (PathEnd::Done(u), PathEnd::Done(w)) = (x, y) {
            diff.push(w - u);
        }
    }
    let tail = (-ctx.alpha() * cfg.horizon).exp();
    let opt = summarize(&va, cfg.n_paths, ca, tail);
    let alt = summarize(&vb, cfg.n_paths, cb, tail);
    let paired = summarize(&diff, diff.len(), 0, tail);
    let pooled_se = (opt.std_error.powi(2) + alt.std_error.powi(2)).sqrt();
    Ok(DominanceReport {
        optimal: opt,
        alternative: alt,
        pooled_se,
        paired_se: paired.std_error,
        dominated: alt.estimate <= opt.estimate + 3.0 * pooled_se,
    })
}
