//! Adaptive Simpson quadrature for real and complex integrands.

use std::ops::{Add, Mul, Sub};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::real::Real;

/// Values an integrand may return.
pub trait Integrand<T>:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<T, Output = Self>
{
    fn zero() -> Self;
    fn magnitude(&self) -> T;
}

impl<T: Real> Integrand<T> for T {
    fn zero() -> Self {
        T::zero()
    }
    fn magnitude(&self) -> T {
        self.abs()
    }
}

impl<T: Real> Integrand<T> for Complex<T> {
    fn zero() -> Self {
        Complex::new(T::zero(), T::zero())
    }
    fn magnitude(&self) -> T {
        self.norm()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimpsonOptions<T> {
    /// Target error relative to the integral of `|f|` over the interval.
    pub rel_tol: T,
    /// Absolute floor on the target error.
    pub abs_tol: T,
    /// Initial uniform panels before adaptive refinement starts.
    pub panels: usize,
    pub max_depth: u32,
}

impl<T: Real> SimpsonOptions<T> {
    pub fn with_tolerance(rel_tol: T) -> Self {
        Self {
            rel_tol,
            abs_tol: T::min_positive_value(),
            panels: 16,
            max_depth: 48,
        }
    }
}

struct Panel<T, V> {
    a: T,
    b: T,
    fa: V,
    fm: V,
    fb: V,
    whole: V,
}

fn simpson<T: Real, V: Integrand<T>>(h: T, fa: V, fm: V, fb: V) -> V {
    (fa + fm * T::lit(4.0) + fb) * (h / T::lit(6.0))
}

/// Integrates `f` over `[a, b]`.
///
/// The tolerance is scaled by a coarse estimate of `int |f|`, so integrands
/// that are tiny everywhere are still resolved to full relative precision.
pub fn adaptive_simpson<T, V, F>(f: F, a: T, b: T, opts: SimpsonOptions<T>) -> Result<V>
where
    T: Real,
    V: Integrand<T>,
    F: Fn(T) -> V,
{
    if a == b {
        return Ok(V::zero());
    }
    let n = opts.panels.max(1);
    let width = (b - a) / T::from_usize(n).expect("panel count");
    let mut panels = Vec::with_capacity(n);
    let mut scale = T::zero();
    let mut fa = f(a);
    for i in 0..n {
        let pa = a + width * T::from_usize(i).expect("panel index");
        let pb = if i + 1 == n { b } else { pa + width };
        let fm = f((pa + pb) * T::half());
        let fb = f(pb);
        let whole = simpson(pb - pa, fa, fm, fb);
        scale += (fa.magnitude() + fm.magnitude() * T::lit(4.0) + fb.magnitude())
            * (pb - pa).abs()
            / T::lit(6.0);
        panels.push(Panel {
            a: pa,
            b: pb,
            fa,
            fm,
            fb,
            whole,
        });
        fa = fb;
    }
    let target = (opts.rel_tol * scale).max(opts.abs_tol);
    let per_panel = target / T::from_usize(n).expect("panel count");

    let mut total = V::zero();
    for p in panels {
        total = total + refine(&f, p, per_panel, opts.max_depth)?;
    }
    Ok(total)
}

fn refine<T, V, F>(f: &F, p: Panel<T, V>, tol: T, depth: u32) -> Result<V>
where
    T: Real,
    V: Integrand<T>,
    F: Fn(T) -> V,
{
    let m = (p.a + p.b) * T::half();
    let lm = (p.a + m) * T::half();
    let rm = (m + p.b) * T::half();
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(m - p.a, p.fa, flm, p.fm);
    let right = simpson(p.b - m, p.fm, frm, p.fb);
    let both = left + right;
    let delta = both - p.whole;
    let err = delta.magnitude() / T::lit(15.0);
    if !err.is_finite() {
        return Err(Error::Numerical("non-finite integrand in quadrature".into()));
    }
    if err <= tol || (m - p.a).abs() <= T::epsilon() * m.abs().max(T::one()) {
        return Ok(both + delta * (T::one() / T::lit(15.0)));
    }
    if depth == 0 {
        return Err(Error::Numerical(format!(
            "quadrature failed to converge on [{}, {}]",
            p.a, p.b
        )));
    }
    let half = tol * T::half();
    let l = refine(
        f,
        Panel {
            a: p.a,
            b: m,
            fa: p.fa,
            fm: flm,
            fb: p.fm,
            whole: left,
        },
        half,
        depth - 1,
    )?;
    let r = refine(
        f,
        Panel {
            a: m,
            b: p.b,
            fa: p.fm,
            fm: frm,
            fb: p.fb,
            whole: right,
        },
        half,
        depth - 1,
    )?;
    Ok(l + r)
}

/// Nodes and weights of an `n`-point Gauss rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp;
        loop {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

/// Gauss-Laguerre rule for `int_0^inf e^{-x} f(x) dx`.
pub fn gauss_laguerre(n: usize) -> GaussRule {
    let mut nodes: Vec<f64> = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    let mut z = 0.0;
    for i in 0..n {
        z = match i {
            0 => 3.0 / (1.0 + 2.4 * n as f64),
            1 => z + 15.0 / (1.0 + 2.5 * n as f64),
            _ => {
                let ai = (i - 1) as f64;
                z + (1.0 + 2.55 * ai) / (1.9 * ai) * (z - nodes[i - 2])
            }
        };
        let (mut dp, mut p2);
        loop {
            let mut p1 = 1.0;
            p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = (((2 * j - 1) as f64 - z) * p2 - (j - 1) as f64 * p3) / j as f64;
            }
            dp = n as f64 * (p1 - p2) / z;
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() <= 1e-14 * z.abs().max(1.0) {
                break;
            }
        }
        nodes.push(z);
        weights.push(-1.0 / (dp * n as f64 * p2));
    }
    GaussRule { nodes, weights }
}
