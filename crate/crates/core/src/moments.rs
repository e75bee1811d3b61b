//! Mean and variance curves of the mutant count.
//!
//! The mean is shared by all three formulations. Variances come either from
//! the closed forms of the mean-field limit or from adaptive integration of the
//! exact finite-`epsilon` moment systems.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::model::{normal_population, ModelParams, ScaledParams};
use crate::ode::{self, Tolerance};
use crate::real::{branch_threshold, expm1_ratio, switch_scale, Real};

/// Which microscopic growth rule the mutants follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setting {
    /// Deterministic mutant growth: `m' = (1 + beta) m + eta`.
    #[serde(rename = "ld")]
    LuriaDelbruck,
    /// Poisson birth increments with intensity `beta m`.
    #[serde(rename = "lc")]
    LeaCoulson,
    /// Birth increments driven by the mean mutant count `beta M(t)`.
    #[serde(rename = "simplified")]
    Simplified,
}

impl Setting {
    pub const ALL: [Setting; 3] = [
        Setting::LuriaDelbruck,
        Setting::LeaCoulson,
        Setting::Simplified,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Setting::LuriaDelbruck => "ld",
            Setting::LeaCoulson => "lc",
            Setting::Simplified => "simplified",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ld" | "luria-delbruck" => Ok(Setting::LuriaDelbruck),
            "lc" | "lea-coulson" => Ok(Setting::LeaCoulson),
            "simplified" | "s" => Ok(Setting::Simplified),
            other => Err(Error::invalid(
                "setting",
                format!("unknown setting `{other}` (expected ld, lc or simplified)"),
            )),
        }
    }
}

/// Sampled mean, variance and second moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCurve<T> {
    pub times: Vec<T>,
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    pub second_moment: Vec<T>,
}

impl<T: Real> MomentCurve<T> {
    fn from_mean_variance(times: Vec<T>, mean: Vec<T>, variance: Vec<T>) -> Self {
        let second_moment = mean
            .iter()
            .zip(&variance)
            .map(|(&m, &v)| v + m * m)
            .collect();
        Self {
            times,
            mean,
            variance,
            second_moment,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Mean and variance at the last sample time.
    pub fn last(&self) -> Option<(T, T)> {
        Some((*self.mean.last()?, *self.variance.last()?))
    }
}

fn check_time<T: Real>(field: &'static str, t: T) -> Result<()> {
    if t >= T::zero() && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{t} violates {field} >= 0")))
    }
}

fn check_grid<T: Real>(field: &'static str, grid: &[T]) -> Result<()> {
    match grid.first() {
        None => Err(Error::invalid(field, "empty time grid")),
        Some(&t0) if t0 != T::zero() => Err(Error::invalid(field, "time grid must start at 0")),
        _ if grid.windows(2).any(|w| !(w[1] > w[0])) => {
            Err(Error::invalid(field, "time grid must be strictly increasing"))
        }
        _ => Ok(()),
    }
}

/// Solution of `y' = rate y + amp e^{source t}`, `y(0) = y0`.
fn linear_source<T: Real>(rate: T, source: T, amp: T, y0: T, t: T, what: &'static str) -> Result<T> {
    let gap = source - rate;
    let forced = if gap.abs() < branch_threshold::<T>() * switch_scale(&[source, rate]) {
        amp * t * (source * t).exp()
    } else {
        amp * (rate * t).exp() * (gap * t).exp_m1() / gap
    };
    finite(forced + y0 * (rate * t).exp(), what)
}

/// Mean mutant count `M(t)` of the unscaled model.
pub fn mean_closed<T: Real>(params: &ModelParams<T>, t: T) -> Result<T> {
    check_time("t", t)?;
    linear_source(
        params.beta,
        params.net_growth(),
        params.mu * params.n0,
        params.m0,
        t,
        "mean mutant count",
    )
}

/// Mean-field mean `M~(tau)`.
pub fn mean_scaled<T: Real>(scaled: &ScaledParams<T>, tau: T) -> Result<T> {
    check_time("tau", tau)?;
    linear_source(
        scaled.gamma,
        scaled.gamma1,
        scaled.nu * scaled.n0,
        scaled.m0,
        tau,
        "scaled mean mutant count",
    )
}

/// Mean-field variance `V~(tau)` from the closed forms of the limit model.
pub fn variance_scaled<T: Real>(setting: Setting, scaled: &ScaledParams<T>, tau: T) -> Result<T> {
    check_time("tau", tau)?;
    let ScaledParams {
        gamma: g,
        gamma1: g1,
        nu,
        n0,
        m0,
        ..
    } = *scaled;
    let src = nu * n0;
    let thr = branch_threshold::<T>() * switch_scale(&[g1, g]);
    let two = T::two();
    let v = match setting {
        Setting::LuriaDelbruck => {
            let gap = g1 - two * g;
            if gap.abs() < thr {
                src * tau * (g1 * tau).exp()
            } else {
                src * (two * g * tau).exp() * (gap * tau).exp_m1() / gap
            }
        }
        Setting::LeaCoulson => {
            let initial = m0 * (g * tau).exp() * (g * tau).exp_m1();
            let immigrant = if g == T::zero() {
                src * expm1_ratio(g1, tau)
            } else if (g1 - g).abs() < thr {
                two * src / g * (g * tau).exp() * (g * tau).exp_m1()
                    - src * tau * (g * tau).exp()
            } else if (g1 - two * g).abs() < thr {
                -src / g * (g * tau).exp() * (g * tau).exp_m1()
                    + two * src * tau * (two * g * tau).exp()
            } else {
                let gap2 = g1 - two * g;
                src / (g1 - g)
                    * (two * g * tau).exp()
                    * (g1 * (gap2 * tau).exp_m1() / gap2 + (-g * tau).exp_m1())
            };
            initial + immigrant
        }
        // dV/dtau = gamma M + nu N integrates to M(tau) - M0.
        Setting::Simplified => mean_scaled(scaled, tau)? - m0,
    };
    finite(v, "scaled variance")
}

/// Right-hand side `(dM/dt, dV/dt)` of the exact moment system of the jump
/// process with mutant rate `beta` and mutation intensity `lambda = mu N(t)`.
fn moment_rhs<T: Real>(setting: Setting, beta: T, lambda: T, mean: T, var: T) -> [T; 2] {
    let one = T::one();
    let two = T::two();
    let second = var + mean * mean;
    let dm = beta * mean + lambda;
    let dv = match setting {
        Setting::LuriaDelbruck => {
            two * beta * var + beta * beta * second + lambda * (one + two * beta * mean + lambda)
        }
        Setting::LeaCoulson => {
            two * beta * var
                + beta * beta * second
                + beta * mean * (one + two * lambda)
                + lambda * (one + lambda)
        }
        Setting::Simplified => dm + dm * dm,
    };
    [dm, dv]
}

fn curve_from_states<T: Real>(times: Vec<T>, states: Vec<[T; 2]>) -> MomentCurve<T> {
    let (mean, variance) = states.into_iter().map(|[m, v]| (m, v)).unzip();
    MomentCurve::from_mean_variance(times, mean, variance)
}

/// Integrates the exact moment system of the unscaled kinetic model.
pub fn variance_ode<T: Real>(
    setting: Setting,
    params: &ModelParams<T>,
    t_grid: &[T],
) -> Result<MomentCurve<T>> {
    variance_ode_with(setting, params, t_grid, Tolerance::default())
}

pub fn variance_ode_with<T: Real>(
    setting: Setting,
    params: &ModelParams<T>,
    t_grid: &[T],
    tol: Tolerance<T>,
) -> Result<MomentCurve<T>> {
    params.validate()?;
    check_grid("t_grid", t_grid)?;
    let p = *params;
    let states = ode::integrate(
        |t, y: &[T; 2]| {
            let lambda = p.mu * normal_population(&p, t)?;
            Ok(moment_rhs(setting, p.beta, lambda, y[0], y[1]))
        },
        [p.m0, T::zero()],
        t_grid,
        tol,
    )?;
    Ok(curve_from_states(t_grid.to_vec(), states))
}

/// The same exact finite-`epsilon` system, integrated in scaled time. This is
/// the well-conditioned route to the unscaled moments when `epsilon` is small.
pub fn variance_ode_scaled<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_grid: &[T],
) -> Result<MomentCurve<T>> {
    variance_ode_scaled_with(setting, scaled, tau_grid, Tolerance::default())
}

pub fn variance_ode_scaled_with<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_grid: &[T],
    tol: Tolerance<T>,
) -> Result<MomentCurve<T>> {
    scaled.validate()?;
    check_grid("tau_grid", tau_grid)?;
    let s = *scaled;
    let eps = s.epsilon;
    let states = ode::integrate(
        |tau, y: &[T; 2]| {
            let lambda = eps * s.nu * s.normal_population(tau)?;
            let [dm, dv] = moment_rhs(setting, eps * s.gamma, lambda, y[0], y[1]);
            Ok([dm / eps, dv / eps])
        },
        [s.m0, T::zero()],
        tau_grid,
        tol,
    )?;
    Ok(curve_from_states(tau_grid.to_vec(), states))
}

/// Mean-field limit curve evaluated from the closed forms.
pub fn moment_curve_limit<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_grid: &[T],
) -> Result<MomentCurve<T>> {
    scaled.validate()?;
    check_grid("tau_grid", tau_grid)?;
    let mean = tau_grid
        .iter()
        .map(|&tau| mean_scaled(scaled, tau))
        .collect::<Result<Vec<_>>>()?;
    let variance = tau_grid
        .iter()
        .map(|&tau| variance_scaled(setting, scaled, tau))
        .collect::<Result<Vec<_>>>()?;
    Ok(MomentCurve::from_mean_variance(
        tau_grid.to_vec(),
        mean,
        variance,
    ))
}

/// Mutant fraction `M / (M + N)`.
pub fn concentration<T: Real>(params: &ModelParams<T>, t: T) -> Result<T> {
    let m = mean_closed(params, t)?;
    let n = normal_population(params, t)?;
    let total = m + n;
    if !(total > T::zero()) {
        return Err(Error::invalid("t", "total population must be positive"));
    }
    finite(m / total, "mutant concentration")
}

/// Long-time limit of [`concentration`].
pub fn concentration_limit<T: Real>(params: &ModelParams<T>) -> Result<T> {
    params.validate()?;
    if params.beta >= params.net_growth() {
        Ok(T::one())
    } else {
        Ok(params.mu / (params.alpha - params.beta))
    }
}
