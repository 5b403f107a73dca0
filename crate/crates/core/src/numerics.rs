//! Small numerical kernels shared by the solver layers: bracketed root
//! finding, golden-section maximisation, adaptive Gauss–Kronrod quadrature,
//! finite differences, quintic Hermite interpolation and pairwise summation.

use crate::error::{Result, SolveError};

/// Step used for central differences: `max(1e-6, 1e-6·|x|)`.
#[inline]
pub fn diff_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

/// Central first derivative with the standard step.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = diff_step(x);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central second derivative. Uses a wider step than [`central_diff`] to
/// keep cancellation error under control.
pub fn central_diff2<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = (1e-4 * x.abs()).max(1e-4);
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Brent's method on a bracket `[a, b]` with `f(a)·f(b) ≤ 0`.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    xtol: f64,
    max_iter: usize,
) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || !fa.is_finite() || !fb.is_finite() {
        return Err(SolveError::NoBracket { a, b });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    Ok(b)
}

/// Golden-section search for a maximum of a unimodal `f` on `[a, b]`.
/// Returns `(argmax, max)`.
pub fn golden_max<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a.min(b), a.max(b));
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while (b - a).abs() > tol {
        // NaN compares false, so a failed evaluation pushes the search away from it.
        if f1 >= f2 || f2.is_nan() {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    if f1 >= f2 || f2.is_nan() {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * K15_WEIGHTS[7];
    let mut gauss = fc * G7_WEIGHTS[3];
    for (i, &node) in GK_NODES[..7].iter().enumerate() {
        let dx = h * node;
        let s = f(c - dx) + f(c + dx);
        kron += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G7_WEIGHTS[i / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on a finite interval.
/// Converges when the summed error estimate is below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let mut intervals = vec![(a, b, gk15(&mut f, a, b))];
    for _ in 0..2000 {
        let (total, err) = intervals
            .iter()
            .fold((0.0, 0.0), |(s, e), &(_, _, (v, ev))| (s + v, e + ev));
        if !total.is_finite() {
            return Err(SolveError::Quadrature {
                estimate: total,
                error: err,
            });
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        let (idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1))
            .expect("non-empty interval list");
        let (lo, hi, _) = intervals.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        intervals.push((lo, mid, gk15(&mut f, lo, mid)));
        intervals.push((mid, hi, gk15(&mut f, mid, hi)));
    }
    let (total, err) = intervals
        .iter()
        .fold((0.0, 0.0), |(s, e), &(_, _, (v, ev))| (s + v, e + ev));
    Err(SolveError::Quadrature {
        estimate: total,
        error: err,
    })
}

/// Five-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre5<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> f64 {
    const X: [f64; 3] = [0.0, 0.538_469_310_105_683_1, 0.906_179_845_938_664_0];
    const W: [f64; 3] = [
        0.568_888_888_888_888_9,
        0.478_628_670_499_366_5,
        0.236_926_885_056_189_1,
    ];
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut s = W[0] * f(c);
    for i in 1..3 {
        s += W[i] * (f(c - h * X[i]) + f(c + h * X[i]));
    }
    s * h
}

/// Quintic Hermite interpolation on `[x0, x1]` from value, first and second
/// derivatives at both ends. Returns `(value, derivative)` at `x`.
pub fn quintic_hermite(x0: f64, x1: f64, left: [f64; 3], right: [f64; 3], x: f64) -> (f64, f64) {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    let t4 = t3 * t;
    let t5 = t4 * t;
    let h00 = 1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5;
    let h10 = t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5;
    let h20 = 0.5 * (t2 - 3.0 * t3 + 3.0 * t4 - t5);
    let h01 = 10.0 * t3 - 15.0 * t4 + 6.0 * t5;
    let h11 = -4.0 * t3 + 7.0 * t4 - 3.0 * t5;
    let h21 = 0.5 * (t3 - 2.0 * t4 + t5);
    let d00 = -30.0 * t2 + 60.0 * t3 - 30.0 * t4;
    let d10 = 1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4;
    let d20 = 0.5 * (2.0 * t - 9.0 * t2 + 12.0 * t3 - 5.0 * t4);
    let d01 = 30.0 * t2 - 60.0 * t3 + 30.0 * t4;
    let d11 = -12.0 * t2 + 28.0 * t3 - 15.0 * t4;
    let d21 = 0.5 * (3.0 * t2 - 8.0 * t3 + 5.0 * t4);
    let value = h00 * left[0]
        + h10 * h * left[1]
        + h20 * h * h * left[2]
        + h01 * right[0]
        + h11 * h * right[1]
        + h21 * h * h * right[2];
    let deriv = (d00 * left[0]
        + d10 * h * left[1]
        + d20 * h * h * left[2]
        + d01 * right[0]
        + d11 * h * right[1]
        + d21 * h * h * right[2])
        / h;
    (value, deriv)
}

/// Pairwise (cascade) summation; the result depends only on the order of
/// `values`, not on how the caller produced them.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Index `i` such that `xs[i] <= x <= xs[i + 1]`, clamped to the table.
pub fn locate(xs: &[f64], x: f64) -> usize {
    let n = xs.len();
    debug_assert!(n >= 2);
    match xs.partition_point(|&v| v <= x) {
        0 => 0,
        p if p >= n => n - 2,
        p => p - 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent_root(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
    }

    #[test]
    fn brent_rejects_missing_bracket() {
        assert!(matches!(
            brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 50),
            Err(SolveError::NoBracket { .. })
        ));
    }

    #[test]
    fn golden_section_locates_peak() {
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 2.0, -1.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-7);
        assert!((fx - 2.0).abs() < 1e-12);
    }

    #[test]
    fn gauss_kronrod_handles_peaked_integrand() {
        let v = integrate(|t| (-t * t).exp(), 0.0, 10.0, 1e-14, 1e-12).unwrap();
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn quintic_hermite_reproduces_quintic() {
        let f = |x: f64| x.powi(5) - 2.0 * x.powi(3) + x;
        let df = |x: f64| 5.0 * x.powi(4) - 6.0 * x * x + 1.0;
        let d2f = |x: f64| 20.0 * x.powi(3) - 12.0 * x;
        let (a, b) = (0.5, 1.7);
        for &x in &[0.5, 0.8, 1.1, 1.7] {
            let (v, d) = quintic_hermite(a, b, [f(a), df(a), d2f(a)], [f(b), df(b), d2f(b)], x);
            assert!((v - f(x)).abs() < 1e-12);
            assert!((d - df(x)).abs() < 1e-11);
        }
    }

    #[test]
    fn locate_clamps() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(locate(&xs, -1.0), 0);
        assert_eq!(locate(&xs, 1.5), 1);
        assert_eq!(locate(&xs, 3.0), 2);
        assert_eq!(locate(&xs, 9.0), 2);
    }
}
