//! Embedded Runge-Kutta (Dormand-Prince 5(4)) integration with local error
//! control, used for the moment systems that have no convenient closed form.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance<T> {
    pub abs: T,
    pub rel: T,
}

impl<T: Real> Default for Tolerance<T> {
    fn default() -> Self {
        Self {
            abs: T::min_positive_value(),
            rel: T::lit(1e-10),
        }
    }
}

const MAX_STEPS: usize = 1_000_000;

// Dormand-Prince tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
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

/// Integrates `y' = f(t, y)` from `times[0]` and returns the state at every
/// entry of `times`, which must be nondecreasing.
pub fn integrate<T, const N: usize, F>(
    mut f: F,
    y0: [T; N],
    times: &[T],
    tol: Tolerance<T>,
) -> Result<Vec<[T; N]>>
where
    T: Real,
    F: FnMut(T, &[T; N]) -> Result<[T; N]>,
{
    let Some(&t_start) = times.first() else {
        return Ok(Vec::new());
    };
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        return Err(Error::invalid("times", "must be nondecreasing"));
    }
    let span = times[times.len() - 1] - t_start;
    let mut out = Vec::with_capacity(times.len());
    out.push(y0);

    let mut t = t_start;
    let mut y = y0;
    let mut h = if span > T::zero() {
        span * T::lit(1e-3)
    } else {
        T::one()
    };
    let h_min = span.max(T::one()) * T::epsilon() * T::lit(16.0);
    let mut steps = 0usize;
    let c = |x: f64| T::lit(x);

    for &target in &times[1..] {
        while t < target {
            steps += 1;
            if steps > MAX_STEPS {
                return Err(Error::StepSize {
                    t: t.as_f64(),
                    reason: "step budget exhausted".into(),
                });
            }
            let last = target - t <= h;
            let step = if last { target - t } else { h };

            let mut k = [[T::zero(); N]; 7];
            k[0] = f(t, &y)?;
            for s in 1..7 {
                let mut ys = y;
                for (i, yi) in ys.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for j in 0..s {
                        acc += c(A[s][j]) * k[j][i];
                    }
                    *yi += step * acc;
                }
                k[s] = f(t + c(C[s]) * step, &ys)?;
            }

            let mut y5 = y;
            let mut err = T::zero();
            for i in 0..N {
                let mut hi5 = T::zero();
                let mut hi4 = T::zero();
                for s in 0..7 {
                    hi5 += c(B5[s]) * k[s][i];
                    hi4 += c(B4[s]) * k[s][i];
                }
                y5[i] = y[i] + step * hi5;
                let scale = tol.abs + tol.rel * y[i].abs().max(y5[i].abs());
                let e = (step * (hi5 - hi4)).abs() / scale;
                err = err.max(e);
            }
            if !err.is_finite() || y5.iter().any(|v| !v.is_finite()) {
                return Err(Error::OutOfRange {
                    what: "ODE state",
                });
            }

            if err <= T::one() {
                t = if last { target } else { t + step };
                y = y5;
            }
            let factor = if err == T::zero() {
                c(5.0)
            } else {
                (c(0.9) * err.powf(c(-0.2))).max(c(0.2)).min(c(5.0))
            };
            if !(err <= T::one() && last) {
                h = step * factor;
            }
            if h < h_min && t < target {
                return Err(Error::StepSize {
                    t: t.as_f64(),
                    reason: format!("step {} below minimum {}", h.as_f64(), h_min.as_f64()),
                });
            }
        }
        out.push(y);
    }
    Ok(out)
}
