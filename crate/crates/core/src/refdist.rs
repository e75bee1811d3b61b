//! Reference laws of the mean-field limit.
//!
//! The Luria-Delbrück limit is described by its characteristic function, which
//! is inverted on the integer lattice. Independent clone-based samplers give a
//! second route to every law, and the closed recursion for the Lea-Coulson law
//! at `gamma = gamma1` is only served after it agrees with such a sampler.

use std::sync::OnceLock;

use num_complex::Complex;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::kinetic::{parallel_samples, EmpiricalDistribution, EnsembleOptions, RngStream};
use crate::model::ScaledParams;
use crate::moments::{mean_scaled, Setting};
use crate::poisson::sample_poisson;
use crate::quad::{adaptive_simpson, gauss_laguerre, gauss_legendre, GaussRule, SimpsonOptions};
use crate::real::{branch_threshold, expm1_ratio, Real};

/// Keeps oracle streams apart from simulation streams run with the same seed.
const ORACLE_DOMAIN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Scaled frequencies above this use the rotated-contour evaluation.
const DIRECT_LIMIT: f64 = 64.0;

/// Residual mass above which an inversion is flagged as truncated.
pub const TRUNCATION_WARNING: f64 = 0.01;

/// Probability mass function on `0..=k_max`, with the mass beyond `k_max`
/// kept as `residual`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticePmf<T> {
    pub probs: Vec<T>,
    pub residual: T,
    pub method: String,
    pub warnings: Vec<String>,
}

impl<T: Real> LatticePmf<T> {
    /// Builds a pmf from explicit masses. Fails when the masses are negative
    /// beyond roundoff or do not leave a nonnegative residual.
    pub fn new(probs: Vec<T>, residual: T) -> Result<Self> {
        let tiny = T::lit(1e-9);
        if probs.is_empty() {
            return Err(Error::invalid("probs", "empty pmf"));
        }
        if probs.iter().any(|&p| !(p >= -tiny) || !p.is_finite()) {
            return Err(Error::Numerical("pmf has negative or non-finite mass".into()));
        }
        if !(residual >= -tiny) {
            return Err(Error::Numerical(format!("pmf residual {residual} is negative")));
        }
        let total: T = probs.iter().copied().sum::<T>() + residual;
        if (total - T::one()).abs() > tiny {
            return Err(Error::Numerical(format!("pmf mass {total} differs from 1")));
        }
        Ok(Self {
            probs,
            residual,
            method: String::new(),
            warnings: Vec::new(),
        })
    }

    pub fn k_max(&self) -> usize {
        self.probs.len() - 1
    }

    /// Mean of the truncated part, `sum_k k p_k`.
    pub fn truncated_mean(&self) -> T {
        self.probs
            .iter()
            .enumerate()
            .map(|(k, &p)| T::from_count(k as u64) * p)
            .sum()
    }

    pub fn is_truncated(&self) -> bool {
        self.residual > T::lit(TRUNCATION_WARNING)
    }

    fn with_method(mut self, method: &str) -> Self {
        self.method = method.to_string();
        if self.is_truncated() {
            self.warnings.push(format!(
                "residual mass {} exceeds {TRUNCATION_WARNING}; increase k_max",
                self.residual
            ));
        }
        self
    }
}

#[derive(Debug, Clone, Copy)]
enum Kind<T> {
    /// Point mass at zero.
    Unit,
    /// Poisson law with the given mean, in raw counts.
    Poisson { mean: T },
    /// Compound Poisson law with exponentially growing clones.
    LuriaDelbruck,
}

/// Characteristic function `g(xi) = E exp(-i xi X)` of a limit law.
///
/// For the Luria-Delbrück law `X` is the mutant mass divided by
/// [`CharFn::unscale`], for the Poisson laws it is the raw count.
#[derive(Debug, Clone, Copy)]
pub struct CharFn<T> {
    kind: Kind<T>,
    pub tau: T,
    pub scaled: ScaledParams<T>,
    pub quad_tol: T,
}

fn require_no_initial_mutants<T: Real>(scaled: &ScaledParams<T>) -> Result<()> {
    if scaled.m0 != T::zero() {
        return Err(Error::invalid(
            "m0",
            "reference laws are only available for m0 = 0",
        ));
    }
    Ok(())
}

fn check_tau<T: Real>(tau: T) -> Result<()> {
    if tau >= T::zero() && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("tau", format!("{tau} violates tau >= 0")))
    }
}

/// `e^{-i theta} - 1` without cancellation for small `theta`.
#[inline]
fn neg_iexp_m1<T: Real>(theta: T) -> Complex<T> {
    let s = (theta * T::half()).sin();
    Complex::new(-T::two() * s * s, -theta.sin())
}

/// `e^z - 1` without cancellation for small `z`.
pub fn complex_expm1<T: Real>(z: Complex<T>) -> Complex<T> {
    let s = (z.im * T::half()).sin();
    Complex::new(
        z.re.exp_m1() * z.im.cos() - T::two() * s * s,
        z.re.exp() * z.im.sin(),
    )
}

/// Luria-Delbrück characteristic function at horizon `tau`.
pub fn ld_characteristic_function<T: Real>(
    scaled: &ScaledParams<T>,
    tau: T,
    quad_tol: T,
) -> Result<CharFn<T>> {
    scaled.validate()?;
    require_no_initial_mutants(scaled)?;
    check_tau(tau)?;
    if !(quad_tol > T::zero() && quad_tol <= T::lit(1e-6)) {
        return Err(Error::invalid(
            "quad_tol",
            format!("{quad_tol} violates 0 < quad_tol <= 1e-6"),
        ));
    }
    let kind = if scaled.nu == T::zero() || tau == T::zero() {
        Kind::Unit
    } else if scaled.gamma < branch_threshold::<T>() {
        // clones do not grow: every arrival contributes exactly one mutant
        Kind::Poisson {
            mean: arrival_mean(scaled, tau)?,
        }
    } else {
        ld_unscale_value(scaled, tau)?;
        Kind::LuriaDelbruck
    };
    Ok(CharFn {
        kind,
        tau,
        scaled: *scaled,
        quad_tol,
    })
}

/// Poisson characteristic function of the simplified model.
pub fn simplified_characteristic_function<T: Real>(
    scaled: &ScaledParams<T>,
    tau: T,
) -> Result<CharFn<T>> {
    scaled.validate()?;
    require_no_initial_mutants(scaled)?;
    let mean = mean_scaled(scaled, tau)?;
    Ok(CharFn {
        kind: if mean == T::zero() {
            Kind::Unit
        } else {
            Kind::Poisson { mean }
        },
        tau,
        scaled: *scaled,
        quad_tol: T::zero(),
    })
}

/// Scale factor `u = e^{gamma tau}` between the scaled CF argument and raw
/// mutant counts.
pub fn ld_unscale_value<T: Real>(scaled: &ScaledParams<T>, tau: T) -> Result<T> {
    finite((scaled.gamma * tau).exp(), "clone growth factor")
}

/// Expected number of mutation events on `[0, tau]`.
fn arrival_mean<T: Real>(scaled: &ScaledParams<T>, tau: T) -> Result<T> {
    finite(
        scaled.nu * scaled.n0 * expm1_ratio(scaled.gamma1, tau),
        "expected mutation events",
    )
}

impl<T: Real> CharFn<T> {
    /// Factor converting the CF argument to raw counts: `g(xi)` equals the CF
    /// of the raw count at `xi / unscale()`.
    pub fn unscale(&self) -> T {
        match self.kind {
            Kind::LuriaDelbruck => (self.scaled.gamma * self.tau).exp(),
            _ => T::one(),
        }
    }

    /// `log g(xi)`.
    pub fn log_eval(&self, xi: T) -> Result<Complex<T>> {
        match self.kind {
            Kind::Unit => Ok(Complex::new(T::zero(), T::zero())),
            Kind::Poisson { mean } => Ok(neg_iexp_m1(xi) * mean),
            Kind::LuriaDelbruck => {
                if xi.abs() <= T::lit(DIRECT_LIMIT) {
                    self.ld_log_direct(xi)
                } else {
                    let w = self.ld_log_rotated(xi.abs() / self.unscale())?;
                    Ok(if xi < T::zero() { w.conj() } else { w })
                }
            }
        }
    }

    pub fn eval(&self, xi: T) -> Result<Complex<T>> {
        Ok(self.log_eval(xi)?.exp())
    }

    /// `g(xi) - 1`, accurate for small `xi`.
    pub fn eval_minus_one(&self, xi: T) -> Result<Complex<T>> {
        Ok(complex_expm1(self.log_eval(xi)?))
    }

    /// CF of the raw mutant count at frequency `omega`.
    pub fn eval_raw(&self, omega: T) -> Result<Complex<T>> {
        self.eval(omega * self.unscale())
    }

    fn simpson_options(&self) -> SimpsonOptions<T> {
        SimpsonOptions::with_tolerance(self.quad_tol.max(T::epsilon() * T::lit(64.0)))
    }

    /// `nu N0 int_0^tau (e^{-i xi e^{-gamma z}} - 1) e^{gamma1 z} dz`, real and
    /// imaginary parts integrated separately so each keeps its own accuracy.
    fn ld_log_direct(&self, xi: T) -> Result<Complex<T>> {
        if xi == T::zero() {
            return Ok(Complex::new(T::zero(), T::zero()));
        }
        let s = self.scaled;
        let integrand =
            |z: T| neg_iexp_m1(xi * (-s.gamma * z).exp()) * (s.gamma1 * z).exp();
        let opts = self.simpson_options();
        let re = adaptive_simpson(|z| integrand(z).re, T::zero(), self.tau, opts)?;
        let im = adaptive_simpson(|z| integrand(z).im, T::zero(), self.tau, opts)?;
        let c = s.nu * s.n0;
        Ok(Complex::new(finite(c * re, "log CF")?, finite(c * im, "log CF")?))
    }

    /// Log CF of the raw count at `omega > 0` for frequencies where the direct
    /// integrand oscillates too fast.
    ///
    /// In the clone-size variable `s in [1, u]` the exponent is
    /// `C int_1^u (e^{-i omega s} - 1) s^{-q} ds` with `q = 1 + gamma1/gamma`
    /// and `C = nu N0 e^{gamma1 tau} / gamma`. The oscillatory part is
    /// integrated directly up to `A = 16/omega` and through the tail
    /// `E(A) = int_A^inf e^{-i omega s} s^{-q} ds` on the ray `s = A - i x/omega`
    /// where it decays like `e^{-x}`.
    fn ld_log_rotated(&self, omega: T) -> Result<Complex<T>> {
        let s = self.scaled;
        let u = self.unscale();
        let q = T::one() + s.gamma1 / s.gamma;
        let a_star = (T::lit(16.0) / omega).max(T::one()).min(u);

        // head in v = ln s on unit-width panels
        let legendre = LEGENDRE.get_or_init(|| gauss_legendre(24));
        let top = a_star.ln();
        let panels = top.ceil().to_usize().unwrap_or(1).max(1);
        let width = top / T::from_count(panels as u64);
        let mut head = Complex::new(T::zero(), T::zero());
        for p in 0..panels {
            let mid = width * (T::from_count(p as u64) + T::half());
            for (&x, &w) in legendre.nodes.iter().zip(&legendre.weights) {
                let v = mid + width * T::half() * T::lit(x);
                let phase = Complex::new((T::one() - q) * v, -omega * v.exp());
                head += phase.exp() * (T::lit(w) * width * T::half());
            }
        }

        let laguerre = LAGUERRE.get_or_init(|| gauss_laguerre(40));
        let tail = |a: T| -> Complex<T> {
            let mut inner = Complex::new(T::zero(), T::zero());
            for (&x, &w) in laguerre.nodes.iter().zip(&laguerre.weights) {
                inner += Complex::new(a, -T::lit(x) / omega).powf(-q) * T::lit(w);
            }
            Complex::new(T::zero(), -omega * a).exp() * Complex::new(T::zero(), -T::one() / omega) * inner
        };
        let j = head + tail(a_star) - tail(u);
        let c = s.nu * s.n0 * (s.gamma1 * self.tau).exp() / s.gamma;
        let lambda = arrival_mean(&s, self.tau)?;
        let w = j * c - Complex::new(lambda, T::zero());
        Ok(Complex::new(finite(w.re, "log CF")?, finite(w.im, "log CF")?))
    }
}

static LEGENDRE: OnceLock<GaussRule> = OnceLock::new();
static LAGUERRE: OnceLock<GaussRule> = OnceLock::new();

/// CF of the raw count at the nodes `2 pi j / n_nodes` for `j = 0..=n_nodes/2`.
fn lattice_samples<T: Real>(cf: &CharFn<T>, n_nodes: usize, coarse: Option<&[Complex<T>]>) -> Result<Vec<Complex<T>>> {
    let step = T::TAU() / T::from_count(n_nodes as u64);
    (0..=n_nodes / 2)
        .into_par_iter()
        .map(|j| match coarse {
            // every other node of the doubled grid is already known
            Some(prev) if j % 2 == 0 => Ok(prev[j / 2]),
            _ => cf.eval_raw(step * T::from_count(j as u64)),
        })
        .collect()
}

/// Inverts `cf` on the integer lattice with `n_nodes` trapezoid nodes on
/// `[-pi, pi)` and returns `p_0 ..= p_{k_max}`.
pub fn pmf_from_cf<T: Real>(cf: &CharFn<T>, k_max: usize, n_nodes: usize) -> Result<LatticePmf<T>> {
    check_nodes(k_max, n_nodes)?;
    if let Kind::Unit = cf.kind {
        return point_mass_pmf(k_max);
    }
    let samples = lattice_samples(cf, n_nodes, None)?;
    invert_samples(&samples, k_max, n_nodes)
}

fn point_mass_pmf<T: Real>(k_max: usize) -> Result<LatticePmf<T>> {
    let mut probs = vec![T::zero(); k_max + 1];
    probs[0] = T::one();
    Ok(LatticePmf::new(probs, T::zero())?.with_method("cf"))
}

fn check_nodes(k_max: usize, n_nodes: usize) -> Result<()> {
    if !n_nodes.is_power_of_two() || n_nodes < 2 * k_max.max(1) {
        return Err(Error::invalid(
            "n_nodes",
            format!("{n_nodes} must be a power of two >= 2 k_max"),
        ));
    }
    Ok(())
}

fn invert_samples<T: Real>(samples: &[Complex<T>], k_max: usize, n_nodes: usize) -> Result<LatticePmf<T>> {
    let half = n_nodes / 2;
    let mut buf = vec![Complex::new(T::zero(), T::zero()); n_nodes];
    for (j, &v) in samples.iter().enumerate().take(half) {
        buf[j] = v;
        if j > 0 {
            buf[n_nodes - j] = v.conj();
        }
    }
    buf[half] = Complex::new(samples[half].re, T::zero());
    FftPlanner::new().plan_fft_inverse(n_nodes).process(&mut buf);

    let norm = T::from_count(n_nodes as u64);
    let floor = T::lit(-1e-6);
    let mut probs = Vec::with_capacity(k_max + 1);
    for (k, v) in buf.iter().take(k_max + 1).enumerate() {
        let p = v.re / norm;
        if !(p >= floor) {
            return Err(Error::Numerical(format!(
                "inverted mass p_{k} = {p} is negative beyond quadrature noise"
            )));
        }
        probs.push(p.max(T::zero()));
    }
    let total: T = probs.iter().copied().sum();
    let mut residual = T::one() - total;
    if residual < T::zero() && residual >= T::lit(-1e-9) {
        residual = T::zero();
    }
    Ok(LatticePmf::new(probs, residual)?.with_method("cf"))
}

/// Doubles `k_max` (with four nodes per retained mass) until the residual is
/// below `target`, up to `k_max = 2^20`.
pub fn pmf_from_cf_auto<T: Real>(cf: &CharFn<T>, target: T) -> Result<LatticePmf<T>> {
    const CAP: usize = 1 << 20;
    let mut k_max = 256;
    if let Kind::Unit = cf.kind {
        return point_mass_pmf(k_max);
    }
    let mut samples = lattice_samples(cf, 4 * k_max, None)?;
    loop {
        let pmf = invert_samples(&samples, k_max, 4 * k_max)?;
        if pmf.residual < target {
            return Ok(pmf);
        }
        if k_max >= CAP {
            let mut pmf = pmf;
            pmf.warnings.push(format!(
                "k_max cap {CAP} reached with residual {} above target {target}",
                pmf.residual
            ));
            return Ok(pmf);
        }
        k_max *= 2;
        samples = lattice_samples(cf, 4 * k_max, Some(&samples))?;
    }
}

fn clone_value<T: Real, R: Rng + ?Sized>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau: T,
    lambda: T,
    mean: T,
    rng: &mut R,
) -> Result<T> {
    if setting == Setting::Simplified {
        return Ok(T::from_count(sample_poisson(rng, mean)?));
    }
    let arrivals = sample_poisson(rng, lambda)?;
    let g1 = scaled.gamma1;
    let span = (g1 * tau).exp_m1();
    let mut total = T::zero();
    for _ in 0..arrivals {
        let u = T::lit(rng.gen::<f64>());
        // arrival density proportional to e^{gamma1 z} on [0, tau]
        let z = (u * span).ln_1p() / g1;
        let age = (tau - z).max(T::zero());
        let size = match setting {
            Setting::LuriaDelbruck => (scaled.gamma * age).exp(),
            _ => {
                // Yule clone: geometric on {1, 2, ...} with success e^{-gamma age}
                let p = (-scaled.gamma * age).exp();
                let v = T::lit(1.0 - rng.gen::<f64>());
                T::one() + (v.ln() / (-p).ln_1p()).floor()
            }
        };
        total += size;
    }
    if total.is_finite() && total < T::lit(9.2e18) {
        Ok(total)
    } else {
        Err(Error::OutOfRange { what: "clone size" })
    }
}

/// Raw values of the clone-based sampler of the limit law, in sample order.
pub fn clone_oracle_samples<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau: T,
    n_samples: usize,
    seed: u64,
    opts: EnsembleOptions,
) -> Result<Vec<T>> {
    scaled.validate()?;
    require_no_initial_mutants(scaled)?;
    check_tau(tau)?;
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "need at least one sample"));
    }
    let lambda = arrival_mean(scaled, tau)?;
    let mean = mean_scaled(scaled, tau)?;
    let seed = seed ^ ORACLE_DOMAIN;
    parallel_samples(n_samples, opts, |i| {
        let mut rng = RngStream::new(seed, i).rng();
        clone_value(setting, scaled, tau, lambda, mean, &mut rng)
    })
}

/// Independent sampler of the limit law of `setting` at horizon `tau`.
pub fn clone_oracle<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau: T,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalDistribution<T>> {
    let values = clone_oracle_samples(setting, scaled, tau, n_samples, seed, EnsembleOptions::default())?;
    let mut dist = EmpiricalDistribution::from_samples(&values, seed)?;
    dist.setting = Some(setting);
    dist.scaled = Some(*scaled);
    dist.tau = Some(tau);
    Ok(dist)
}

/// Lea-Coulson law at `gamma = gamma1` by the Ma-Sandri-Sarkar recursion
/// `p_n = (theta/n) sum_{j<n} p_j / (n-j+1)`, without validation.
///
/// This is the compound Poisson law with clone sizes `1/(k(k+1))`: the
/// recursion weight is `(n-j) c_{n-j}`.
pub fn lc_pmf_recursion_unchecked<T: Real>(theta: T, k_max: usize) -> Result<LatticePmf<T>> {
    if !(theta >= T::zero()) || !theta.is_finite() {
        return Err(Error::invalid("theta", format!("{theta} violates theta >= 0")));
    }
    let mut p = Vec::with_capacity(k_max + 1);
    p.push((-theta).exp());
    for n in 1..=k_max {
        let acc: T = (0..n)
            .map(|j| p[j] / T::from_count((n - j + 1) as u64))
            .sum();
        p.push(theta / T::from_count(n as u64) * acc);
    }
    let total: T = p.iter().copied().sum();
    let residual = (T::one() - total).max(T::zero());
    Ok(LatticePmf::new(p, residual)?.with_method("recursion"))
}

/// Samples drawn by the validation gate of [`lc_pmf_recursion`].
pub const GATE_SAMPLES: usize = 1_000_000;
/// Largest total variation distance the gate accepts.
pub const GATE_TV: f64 = 0.01;
const GATE_SEED: u64 = 0x5E_ED1E_A0C0_u64;
const GATE_TAU: f64 = 30.0;

/// Total variation distance between the recursion and the clone sampler at
/// `gamma = gamma1 = 1`, run long enough that clone ages are untruncated.
pub fn lc_recursion_gate_distance<T: Real>(pmf: &LatticePmf<T>, theta: T) -> Result<T> {
    let tau = T::lit(GATE_TAU);
    let nu = theta / tau.exp_m1();
    let scaled = ScaledParams::new(T::one(), T::one(), nu, T::one(), T::one(), T::zero())?;
    let oracle = clone_oracle(Setting::LeaCoulson, &scaled, tau, GATE_SAMPLES, GATE_SEED)?;
    Ok(oracle.tv_distance_pmf(pmf))
}

/// Recursion pmf, served only after it passes the clone-sampler gate.
pub fn lc_pmf_recursion<T: Real>(theta: T, k_max: usize) -> Result<LatticePmf<T>> {
    let pmf = lc_pmf_recursion_unchecked(theta, k_max)?;
    let tv = lc_recursion_gate_distance(&pmf, theta)?;
    if tv > T::lit(GATE_TV) {
        return Err(Error::Gate(format!(
            "recursion differs from the clone sampler by TV {tv} > {GATE_TV}"
        )));
    }
    Ok(pmf)
}
