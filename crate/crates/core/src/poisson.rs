//! Exact Poisson variates.
//!
//! Small means use sequential-search inversion. From `lambda = 10` upwards the
//! transformed rejection sampler PTRS of Hörmann (1993) is used, which needs
//! about 1.1 uniform pairs per variate independent of `lambda`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

const INVERSION_LIMIT: f64 = 10.0;

/// Draws one Poisson(`lambda`) variate.
pub fn sample_poisson<T: Real, R: Rng + ?Sized>(rng: &mut R, lambda: T) -> Result<u64> {
    let lam = lambda.as_f64();
    if !(lam >= 0.0) || !lam.is_finite() {
        return Err(Error::invalid(
            "lambda",
            format!("Poisson mean must be finite and >= 0, got {lam}"),
        ));
    }
    Ok(if lam == 0.0 {
        0
    } else if lam < INVERSION_LIMIT {
        inversion(rng, lam)
    } else {
        ptrs(rng, lam)
    })
}

fn inversion<R: Rng + ?Sized>(rng: &mut R, lam: f64) -> u64 {
    let u: f64 = rng.gen();
    let mut k = 0u64;
    let mut p = (-lam).exp();
    let mut cdf = p;
    while u > cdf {
        k += 1;
        p *= lam / k as f64;
        if p == 0.0 {
            // cdf has saturated below 1 through rounding
            break;
        }
        cdf += p;
    }
    k
}

fn ptrs<R: Rng + ?Sized>(rng: &mut R, lam: f64) -> u64 {
    let slam = lam.sqrt();
    let loglam = lam.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let invalpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.gen::<f64>() - 0.5;
        let v: f64 = rng.gen();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lam + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + invalpha.ln() - (a / (us * us) + b).ln();
        if lhs <= -lam + k * loglam - ln_factorial(k as u64) {
            return k as u64;
        }
    }
}

/// `ln(k!)`: exact summation for small `k`, Stirling series beyond.
pub(crate) fn ln_factorial(k: u64) -> f64 {
    if k < 20 {
        return (2..=k).map(|i| (i as f64).ln()).sum();
    }
    let x = k as f64;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    x * x.ln() - x
        + 0.5 * (std::f64::consts::TAU * x).ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 / 1260.0))
}
