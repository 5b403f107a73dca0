//! Numerical construction of the fundamental pair by adaptive Dormand–Prince
//! integration of `(σ²/2)u″ + μu′ − αu = 0`, stored as a node table and
//! evaluated by quintic Hermite interpolation.

use crate::error::{Result, SolveError};
use crate::model::DiffusionSpec;
use crate::numerics::{locate, quintic_hermite};

const RESCALE_AT: f64 = 1e100;

/// A solution of the ODE tabulated on an increasing grid.
#[derive(Debug, Clone)]
pub(crate) struct Table {
    xs: Vec<f64>,
    /// `(u, u′, u″)` at each node, in units of `exp(shift)`.
    vals: Vec<[f64; 3]>,
    shifts: Vec<f64>,
    norm: f64,
}

impl Table {
    /// Value and derivative at `x`, or NaN outside the table.
    pub(crate) fn eval(&self, x: f64) -> (f64, f64) {
        let n = self.xs.len();
        if !(x >= self.xs[0] && x <= self.xs[n - 1]) {
            return (f64::NAN, f64::NAN);
        }
        let i = locate(&self.xs, x);
        let scale = (self.shifts[i + 1] - self.shifts[i]).exp();
        let r = self.vals[i + 1].map(|v| v * scale);
        let (u, du) = quintic_hermite(self.xs[i], self.xs[i + 1], self.vals[i], r, x);
        let factor = (self.shifts[i] - self.norm).exp();
        (u * factor, du * factor)
    }

    fn normalize_at(&mut self, c: f64) {
        self.norm = 0.0;
        let (u, _) = self.eval(c);
        self.norm = u.abs().ln();
        if u < 0.0 {
            for v in &mut self.vals {
                *v = v.map(|w| -w);
            }
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.xs.len()
    }
}

struct Ode<'a> {
    spec: &'a DiffusionSpec,
}

impl Ode<'_> {
    #[inline]
    fn accel(&self, x: f64, u: f64, du: f64) -> f64 {
        let s = self.spec.sigma(x);
        2.0 * (self.spec.alpha * u - self.spec.mu(x) * du) / (s * s)
    }

    #[inline]
    fn rhs(&self, x: f64, y: [f64; 2]) -> [f64; 2] {
        [y[1], self.accel(x, y[0], y[1])]
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dp_step(ode: &Ode<'_>, x: f64, y: [f64; 2], h: f64) -> ([f64; 2], f64) {
    let mut k = [[0.0; 2]; 7];
    for s in 0..7 {
        let mut ys = y;
        for (j, kj) in k.iter().enumerate().take(s) {
            ys[0] += h * A[s][j] * kj[0];
            ys[1] += h * A[s][j] * kj[1];
        }
        k[s] = ode.rhs(x + C[s] * h, ys);
    }
    let mut y5 = y;
    let mut err = [0.0; 2];
    for s in 0..7 {
        for c in 0..2 {
            y5[c] += h * B5[s] * k[s][c];
            err[c] += h * (B5[s] - B4[s]) * k[s][c];
        }
    }
    let mut norm: f64 = 0.0;
    for c in 0..2 {
        let scale = 1e-300
            + y[c]
                .abs()
                .max(y5[c].abs())
                .max(1e-3 * (y[0].abs() + y5[0].abs()));
        norm = norm.max(err[c].abs() / scale);
    }
    (y5, norm)
}

/// Integrates from `start` to `end` (either direction) with initial state
/// `(u, u′)`, returning the tabulated solution on an increasing grid.
pub(crate) fn integrate_solution(
    spec: &DiffusionSpec,
    start: f64,
    end: f64,
    init: [f64; 2],
    tol: f64,
    max_step: f64,
) -> Result<Table> {
    let ode = Ode { spec };
    let dir = (end - start).signum();
    let span = (end - start).abs();
    let mut x = start;
    let mut y = init;
    let mut shift = 0.0;
    let mut h = max_step.min(span / 16.0);
    let mut xs = vec![x];
    let mut vals = vec![[y[0], y[1], ode.accel(x, y[0], y[1])]];
    let mut shifts = vec![shift];
    let mut steps = 0usize;
    while (end - x) * dir > 0.0 {
        steps += 1;
        if steps > 2_000_000 {
            return Err(SolveError::Shooting("step budget exhausted".into()));
        }
        let remaining = (end - x).abs();
        let last = h >= remaining || remaining - h < 1e-9 * span;
        let step = if last { remaining } else { h };
        let (y_new, err) = dp_step(&ode, x, y, dir * step);
        if !err.is_finite() {
            return Err(SolveError::Shooting(format!(
                "non-finite state near x = {x}"
            )));
        }
        if err <= tol {
            x = if last { end } else { x + dir * step };
            y = y_new;
            if y[0].abs() > RESCALE_AT {
                y = [y[0] / RESCALE_AT, y[1] / RESCALE_AT];
                shift += RESCALE_AT.ln();
            }
            xs.push(x);
            vals.push([y[0], y[1], ode.accel(x, y[0], y[1])]);
            shifts.push(shift);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0)
        };
        h = (step * factor).min(max_step);
        if err > tol && h < 1e-12 * span {
            return Err(SolveError::Shooting(format!(
                "step size underflow near x = {x}"
            )));
        }
    }
    if dir < 0.0 {
        xs.reverse();
        vals.reverse();
        shifts.reverse();
    }
    Ok(Table {
        xs,
        vals,
        shifts,
        norm: 0.0,
    })
}

/// Local characteristic roots `λ± = (−μ ± √(μ² + 2ασ²))/σ²` at `x`.
fn local_roots(spec: &DiffusionSpec, x: f64) -> (f64, f64) {
    let mu = spec.mu(x);
    let s2 = spec.sigma(x).powi(2);
    let disc = (mu * mu + 2.0 * spec.alpha * s2).sqrt();
    ((-mu + disc) / s2, (-mu - disc) / s2)
}

fn is_monotone(table: &Table, increasing: bool) -> bool {
    let n = table.len();
    let stride = (n / 400).max(1);
    let mut prev: Option<f64> = None;
    for i in (0..n).step_by(stride).chain(std::iter::once(n - 1)) {
        let x = table.xs[i];
        let (u, du) = table.eval(x);
        if !(u >= 0.0) || !u.is_finite() {
            return false;
        }
        let ok_slope = if increasing { du > 0.0 } else { du < 0.0 };
        if !ok_slope && u > 0.0 {
            return false;
        }
        if let Some(p) = prev {
            if (increasing && u < p) || (!increasing && u > p) {
                return false;
            }
        }
        prev = Some(u);
    }
    true
}

/// Increasing solution, started at the left end. With `vanish_at_left` it
/// is pinned to zero there (absorbing boundary); otherwise the initial slope
/// follows the local characteristic root.
pub(crate) fn increasing_solution(
    spec: &DiffusionSpec,
    x_min: f64,
    x_max: f64,
    c: f64,
    tol: f64,
    vanish_at_left: bool,
) -> Result<Table> {
    let max_step = (x_max - x_min) / 2000.0;
    for mult in [1.0, 2.0, 4.0] {
        let init = if vanish_at_left {
            [0.0, 1.0]
        } else {
            let (lp, _) = local_roots(spec, x_min);
            [1.0, mult * lp]
        };
        let mut table = integrate_solution(spec, x_min, x_max, init, tol, max_step)?;
        if is_monotone(&table, true) {
            table.normalize_at(c);
            return Ok(table);
        }
        if vanish_at_left {
            break;
        }
    }
    Err(SolveError::Shooting(
        "no increasing positive solution from the left end".into(),
    ))
}

/// Decreasing solution, started at the right end with the local decaying slope.
pub(crate) fn decreasing_solution(
    spec: &DiffusionSpec,
    x_min: f64,
    x_max: f64,
    c: f64,
    tol: f64,
) -> Result<Table> {
    let max_step = (x_max - x_min) / 2000.0;
    for mult in [1.0, 2.0, 4.0] {
        let (_, lm) = local_roots(spec, x_max);
        let init = [1.0, mult * lm];
        let mut table = integrate_solution(spec, x_max, x_min, init, tol, max_step)?;
        if is_monotone(&table, false) {
            table.normalize_at(c);
            return Ok(table);
        }
    }
    Err(SolveError::Shooting(
        "no decreasing positive solution from the right end".into(),
    ))
}
