//! Helpers shared by the integration tests.

#![allow(dead_code)]

use std::io::Write;

use luria_core::{ScaledParams, Setting};

/// Writes a verdict line straight to the terminal, bypassing output capture.
pub fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion}: {verdict} {detail}");
    let _ = out.flush();
}

pub fn experiment(gamma: f64, epsilon: f64) -> ScaledParams<f64> {
    ScaledParams::new(gamma, 3.0, 1e-7, epsilon, 1.0, 0.0).unwrap()
}

/// `S(n, i)` for `n <= 4`.
const STIRLING2: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 1.0, 0.0, 0.0],
    [0.0, 1.0, 3.0, 1.0, 0.0],
    [0.0, 1.0, 7.0, 6.0, 1.0],
];
const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

type Poly = [f64; 5];

fn mul(a: &Poly, b: &Poly) -> Poly {
    let mut c = [0.0; 5];
    for i in 0..5 {
        for j in 0..5 - i {
            c[i + j] += a[i] * b[j];
        }
    }
    c
}

/// `E[Z^n]` for `Z ~ Poisson(r0 + r1 m)` as a polynomial in `m`.
fn poisson_moment(n: usize, r0: f64, r1: f64) -> Poly {
    let rate = [r0, r1, 0.0, 0.0, 0.0];
    let mut power = [1.0, 0.0, 0.0, 0.0, 0.0];
    let mut out = [0.0; 5];
    for &stirling in &STIRLING2[n][..=n] {
        for (o, p) in out.iter_mut().zip(&power) {
            *o += stirling * p;
        }
        power = mul(&power, &rate);
    }
    out
}

/// Right-hand side for raw moments `E[m^k]`, `k = 1..=4`, in scaled time.
fn raw_rhs(setting: Setting, s: &ScaledParams<f64>, tau: f64, y: &[f64; 5]) -> [f64; 5] {
    let eps = s.epsilon;
    let beta = eps * s.gamma;
    let lambda = eps * s.nu * s.n0 * (s.gamma1 * tau).exp();
    // m' = a m + Z with Z ~ Poisson(r0 + r1 m)
    let (a, r0, r1) = match setting {
        Setting::LuriaDelbruck => (1.0 + beta, lambda, 0.0),
        Setting::LeaCoulson => (1.0, lambda, beta),
        Setting::Simplified => (1.0, lambda + beta * y[1], 0.0),
    };
    let mut dy = [0.0; 5];
    for k in 1..=4 {
        let mut poly = [0.0; 5];
        for j in 0..=k {
            let z = poisson_moment(k - j, r0, r1);
            let coeff = BINOMIAL[k][j] * a.powi(j as i32);
            for p in 0..5 - j {
                poly[p + j] += coeff * z[p];
            }
        }
        poly[k] -= 1.0;
        dy[k] = poly.iter().zip(y).map(|(c, m)| c * m).sum::<f64>() / eps;
    }
    dy
}

/// Raw moments `[1, E m, E m^2, E m^3, E m^4]` of the kinetic model at `tau`
/// by classical RK4.
pub fn raw_moments(setting: Setting, s: &ScaledParams<f64>, tau: f64, steps: usize) -> [f64; 5] {
    let mut y = [1.0, s.m0, s.m0.powi(2), s.m0.powi(3), s.m0.powi(4)];
    let h = tau / steps as f64;
    let axpy = |y: &[f64; 5], k: &[f64; 5], c: f64| {
        let mut out = *y;
        for i in 0..5 {
            out[i] += c * k[i];
        }
        out
    };
    for i in 0..steps {
        let t = i as f64 * h;
        let k1 = raw_rhs(setting, s, t, &y);
        let k2 = raw_rhs(setting, s, t + h / 2.0, &axpy(&y, &k1, h / 2.0));
        let k3 = raw_rhs(setting, s, t + h / 2.0, &axpy(&y, &k2, h / 2.0));
        let k4 = raw_rhs(setting, s, t + h, &axpy(&y, &k3, h));
        for j in 0..5 {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    y
}

/// Mean, variance and the standard errors of the sample mean and sample
/// variance for `n` draws.
#[derive(Debug, Clone, Copy)]
pub struct Sampling {
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    pub se_variance: f64,
}

pub fn sampling(raw: &[f64; 5], n: usize) -> Sampling {
    let mu = raw[1];
    let var = raw[2] - mu * mu;
    let mu4 = raw[4] - 4.0 * mu * raw[3] + 6.0 * mu * mu * raw[2] - 3.0 * mu.powi(4);
    let n_f = n as f64;
    Sampling {
        mean: mu,
        variance: var,
        se_mean: (var / n_f).sqrt(),
        se_variance: ((mu4 - var * var * (n_f - 3.0) / (n_f - 1.0)) / n_f).sqrt(),
    }
}
