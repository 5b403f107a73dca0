//! Hermite functions of negative order and parabolic cylinder functions,
//! evaluated from the integral representation
//! `𝓗_ν(z) = 1/Γ(−ν) ∫₀^∞ exp(−t² − 2tz) t^(−ν−1) dt`.

use statrs::function::gamma::ln_gamma;

use crate::error::{Result, SolveError};
use crate::numerics::integrate;

const ABS_TOL: f64 = 1e-12;
const REL_TOL: f64 = 1e-10;

/// Hermite function `𝓗_ν(z)` for `ν < 0`.
pub fn hermite_fn(nu: f64, z: f64) -> Result<f64> {
    if !(nu < 0.0) {
        return Err(SolveError::NonNegativeOrder(nu));
    }
    let p = -nu;
    let log_integrand = |t: f64| -t * t - 2.0 * t * z + (p - 1.0) * t.ln();

    // Interior mode of the integrand when it has one; the integral is split
    // there and everything is scaled by the peak value to avoid overflow.
    let mode = if p > 1.0 {
        0.5 * (-z + (z * z + 2.0 * (p - 1.0)).sqrt())
    } else {
        0.0
    };
    let (split, shift) = if mode > 0.0 {
        (mode, log_integrand(mode))
    } else {
        (1.0 / (1.0 + z.max(0.0)), 0.0)
    };

    let head = if p < 1.0 {
        // t = u^(1/p) removes the t^(p−1) singularity at the origin.
        let inv_p = 1.0 / p;
        let upper = split.powf(p);
        inv_p
            * integrate(
                |u| {
                    if u <= 0.0 {
                        (-shift).exp()
                    } else {
                        let t = u.powf(inv_p);
                        (-t * t - 2.0 * t * z - shift).exp()
                    }
                },
                0.0,
                upper,
                ABS_TOL,
                REL_TOL,
            )?
    } else {
        integrate(
            |t| {
                if t <= 0.0 {
                    if p == 1.0 {
                        (-shift).exp()
                    } else {
                        0.0
                    }
                } else {
                    (log_integrand(t) - shift).exp()
                }
            },
            0.0,
            split,
            ABS_TOL,
            REL_TOL,
        )?
    };

    // Tail on [split, ∞) through t = split + s/(1 − s).
    let tail = integrate(
        |s| {
            if s >= 1.0 {
                return 0.0;
            }
            let w = 1.0 - s;
            let t = split + s / w;
            let v = (log_integrand(t) - shift).exp() / (w * w);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        ABS_TOL,
        REL_TOL,
    )?;

    Ok((head + tail) * (shift - ln_gamma(p)).exp())
}

/// Parabolic cylinder function `𝒟_ν(z) = 2^(−ν/2) e^(−z²/4) 𝓗_ν(z/√2)` for `ν < 0`.
pub fn parabolic_cylinder(nu: f64, z: f64) -> Result<f64> {
    let h = hermite_fn(nu, z / std::f64::consts::SQRT_2)?;
    Ok((-0.5 * nu * std::f64::consts::LN_2 - 0.25 * z * z).exp() * h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::erf::erfc;
    use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};

    fn d_minus_one(z: f64) -> f64 {
        (0.25 * z * z).exp() * FRAC_PI_2.sqrt() * erfc(z / SQRT_2)
    }

    #[test]
    fn gaussian_integral_at_origin() {
        let h = hermite_fn(-1.0, 0.0).unwrap();
        assert!((h - PI.sqrt() / 2.0).abs() < 1e-12);
        assert!((h - 0.886_226_925_452_758).abs() < 1e-12);
    }

    #[test]
    fn order_minus_one_matches_erfc_form() {
        assert!((parabolic_cylinder(-1.0, 0.0).unwrap() - 1.253_314_137_315_500_3).abs() < 1e-12);
        let d1 = parabolic_cylinder(-1.0, 1.0).unwrap();
        assert!((d1 - d_minus_one(1.0)).abs() < 1e-10);
        assert!((d1 - 0.510_643_741_079_660_7).abs() < 1e-10);
    }

    #[test]
    fn decays_for_large_argument() {
        for nu in [-0.3, -1.0, -2.5] {
            let d5 = parabolic_cylinder(nu, 5.0).unwrap();
            let d10 = parabolic_cylinder(nu, 10.0).unwrap();
            assert!(d10 < d5 && d10 > 0.0);
        }
    }

    #[test]
    fn rejects_nonnegative_order() {
        assert!(matches!(
            hermite_fn(0.0, 1.0),
            Err(SolveError::NonNegativeOrder(_))
        ));
        assert!(matches!(
            parabolic_cylinder(0.5, 1.0),
            Err(SolveError::NonNegativeOrder(_))
        ));
    }

    #[test]
    fn small_order_near_singular_weight() {
        // 𝓗_ν(z) → 1 as ν → 0⁻ since t^(−ν−1)/Γ(−ν) concentrates at the origin.
        let h = hermite_fn(-1e-3, 0.7).unwrap();
        assert!((h - 1.0).abs() < 5e-3);
        // Recurrence 𝓗_{ν+1}(z) = 2z𝓗_ν(z) − 2ν𝓗_{ν−1}(z) with ν = −1.5.
        let (nu, z) = (-1.5, 0.4);
        let lhs = hermite_fn(nu + 1.0, z).unwrap();
        let rhs =
            2.0 * z * hermite_fn(nu, z).unwrap() - 2.0 * nu * hermite_fn(nu - 1.0, z).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn large_negative_argument_stays_finite() {
        let h = hermite_fn(-1.05, -17.0).unwrap();
        assert!(h.is_finite() && h > 1e100);
    }
}
