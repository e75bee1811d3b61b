//! Second-order diffusion approximations of the limit dynamics.
//!
//! All three truncations share the form
//!
//! ```text
//! f_t + ((a m + b) f)_m = ((c m + d) f)_mm
//! ```
//!
//! with coefficients depending on time only. Writing `f = u h(y)` with
//! `u = exp(-int a)`, `y = u m - B` and `B = int b u` removes the drift:
//! `h_t = ((c u y + c u B + d u^2) h)_yy`. For `c = 0` this is the heat equation
//! in the clock `int d u^2`, which gives the closed form. The finite-difference
//! solver works in the same drift-free frame by default, so the grid follows
//! the exponential stretching of the mutant axis.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::model::ScaledParams;
use crate::moments::{mean_scaled, variance_scaled, Setting};
use crate::ode::{self, Tolerance};
use crate::real::{expm1_ratio, Real};

pub type CoefficientFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Time-dependent coefficients `a, b, c, d` of the general linear equation.
#[derive(Clone)]
pub struct FPCoefficients<T> {
    pub a: CoefficientFn<T>,
    pub b: CoefficientFn<T>,
    pub c: CoefficientFn<T>,
    pub d: CoefficientFn<T>,
    /// Model the coefficients were built from. Enables closed-form
    /// characteristic integrals.
    pub origin: Option<(Setting, ScaledParams<T>)>,
}

impl<T: Real> fmt::Debug for FPCoefficients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let z = T::zero();
        f.debug_struct("FPCoefficients")
            .field("a(0)", &(self.a)(z))
            .field("b(0)", &(self.b)(z))
            .field("c(0)", &(self.c)(z))
            .field("d(0)", &(self.d)(z))
            .field("origin", &self.origin)
            .finish()
    }
}

impl<T: Real> FPCoefficients<T> {
    /// Coefficients given as functions, without a known origin.
    pub fn new(
        a: impl Fn(T) -> T + Send + Sync + 'static,
        b: impl Fn(T) -> T + Send + Sync + 'static,
        c: impl Fn(T) -> T + Send + Sync + 'static,
        d: impl Fn(T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            a: Arc::new(a),
            b: Arc::new(b),
            c: Arc::new(c),
            d: Arc::new(d),
            origin: None,
        }
    }

    pub fn constant(a: T, b: T, c: T, d: T) -> Self {
        Self::new(move |_| a, move |_| b, move |_| c, move |_| d)
    }

    fn has_multiplicative_noise(&self, horizon: T) -> bool {
        match self.origin {
            Some((setting, s)) => setting == Setting::LeaCoulson && s.gamma != T::zero(),
            None => (0..=16).any(|i| (self.c)(horizon * T::lit(i as f64 / 16.0)) != T::zero()),
        }
    }
}

/// Coefficients of the diffusion approximation of `setting`.
pub fn build_coefficients<T: Real>(setting: Setting, scaled: &ScaledParams<T>) -> Result<FPCoefficients<T>> {
    scaled.validate()?;
    let s = *scaled;
    let source = move |t: T| s.nu * s.n0 * (s.gamma1 * t).exp();
    let half = T::half();
    let mut coeffs = match setting {
        Setting::LuriaDelbruck => FPCoefficients::new(
            move |_| s.gamma,
            source,
            |_| T::zero(),
            move |t| half * source(t),
        ),
        Setting::LeaCoulson => FPCoefficients::new(
            move |_| s.gamma,
            source,
            move |_| half * s.gamma,
            move |t| half * source(t),
        ),
        Setting::Simplified => {
            let rate = move |t: T| {
                s.gamma * mean_scaled(&s, t).unwrap_or_else(|_| T::infinity()) + source(t)
            };
            FPCoefficients::new(|_| T::zero(), rate, |_| T::zero(), move |t| half * rate(t))
        }
    };
    coeffs.origin = Some((setting, s));
    Ok(coeffs)
}

/// Characteristic quantities at time `time`: `u = exp(-int a)`,
/// `shift = int b u` and `tau_heat = int d u^2`, all from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChangeOfVariables<T> {
    pub time: T,
    pub u: T,
    pub shift: T,
    pub tau_heat: T,
}

impl<T: Real> ChangeOfVariables<T> {
    /// Drift-free coordinate of the mutant mass `m`.
    pub fn y(&self, m: T) -> T {
        self.u * m - self.shift
    }

    pub fn m(&self, y: T) -> T {
        (y + self.shift) / self.u
    }
}

/// Characteristic quantities at each of the nondecreasing `times`, starting
/// from 0. Closed forms are used when the coefficients come from
/// [`build_coefficients`], otherwise the defining integrals are solved as an
/// ODE system.
pub fn change_of_variables<T: Real>(coeffs: &FPCoefficients<T>, times: &[T]) -> Result<Vec<ChangeOfVariables<T>>> {
    if times.iter().any(|&t| !(t >= T::zero())) {
        return Err(Error::invalid("tau", "times must be >= 0"));
    }
    match coeffs.origin {
        Some((setting, s)) => times.iter().map(|&t| closed_form_cov(setting, &s, t)).collect(),
        None => {
            let mut grid = Vec::with_capacity(times.len() + 1);
            grid.push(T::zero());
            grid.extend_from_slice(times);
            let (a, b, d) = (coeffs.a.clone(), coeffs.b.clone(), coeffs.d.clone());
            let states = ode::integrate(
                |t, y: &[T; 3]| {
                    let u = (-y[0]).exp();
                    Ok([a(t), b(t) * u, d(t) * u * u])
                },
                [T::zero(); 3],
                &grid,
                Tolerance {
                    abs: T::epsilon(),
                    rel: T::lit(1e-11).max(T::epsilon() * T::lit(16.0)),
                },
            )?;
            Ok(times
                .iter()
                .zip(&states[1..])
                .map(|(&time, y)| ChangeOfVariables {
                    time,
                    u: (-y[0]).exp(),
                    shift: y[1],
                    tau_heat: y[2],
                })
                .collect())
        }
    }
}

fn closed_form_cov<T: Real>(setting: Setting, s: &ScaledParams<T>, t: T) -> Result<ChangeOfVariables<T>> {
    let src = s.nu * s.n0;
    let (u, shift, tau_heat) = match setting {
        Setting::Simplified => {
            let shift = mean_scaled(s, t)? - s.m0;
            (T::one(), shift, shift * T::half())
        }
        _ => (
            (-s.gamma * t).exp(),
            src * expm1_ratio(s.gamma1 - s.gamma, t),
            src * T::half() * expm1_ratio(s.gamma1 - T::two() * s.gamma, t),
        ),
    };
    Ok(ChangeOfVariables {
        time: t,
        u,
        shift: finite(shift, "characteristic shift")?,
        tau_heat: finite(tau_heat, "heat clock")?,
    })
}

/// Density on a mesh of `n_cells` cells.
///
/// Without `nodes` the mesh is uniform, `[m_min, m_max]` is split into equal
/// cells and `values` are cell averages. With `nodes` the values are point
/// densities at the given increasing nodes, each owning the dual cell between
/// the midpoints to its neighbours, and `m_min`, `m_max` are the end nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction<T> {
    pub m_min: T,
    pub m_max: T,
    pub n_cells: usize,
    pub values: Vec<T>,
    pub time: T,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<Vec<T>>,
}

impl<T: Real> GridFunction<T> {
    pub fn new(m_min: T, m_max: T, values: Vec<T>, time: T) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("n_cells", "grid needs at least one cell"));
        }
        if !(m_max > m_min) || !m_min.is_finite() || !m_max.is_finite() {
            return Err(Error::invalid("m_max", format!("[{m_min}, {m_max}] is not an interval")));
        }
        Ok(Self {
            m_min,
            m_max,
            n_cells: values.len(),
            values,
            time,
            nodes: None,
        })
    }

    pub fn on_nodes(nodes: Vec<T>, values: Vec<T>, time: T) -> Result<Self> {
        if nodes.len() != values.len() || nodes.len() < 2 {
            return Err(Error::invalid("nodes", "need one value per node and at least two nodes"));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("nodes", "nodes must be finite and strictly increasing"));
        }
        let mut g = Self::new(nodes[0], nodes[nodes.len() - 1], values, time)?;
        g.nodes = Some(nodes);
        Ok(g)
    }

    /// Unit point mass in the cell centred at `center`. The mesh has width
    /// `(upper - lower) / n_cells`. It starts at or above `lower` and is shifted
    /// up by at most one cell so that one cell is centred at `center`.
    pub fn point_mass(center: T, lower: T, upper: T, n_cells: usize) -> Result<Self> {
        if n_cells < 3 {
            return Err(Error::invalid("n_cells", "need at least 3 cells"));
        }
        if !(lower < center && center < upper) {
            return Err(Error::invalid("m_min", format!("{center} is not inside [{lower}, {upper}]")));
        }
        let width = (upper - lower) / T::from_count(n_cells as u64);
        let below = ((center - lower) / width - T::half()).floor().max(T::zero());
        let j0 = below.to_usize().unwrap_or(0).min(n_cells - 1);
        let m_min = center - (T::from_count(j0 as u64) + T::half()) * width;
        let mut values = vec![T::zero(); n_cells];
        values[j0] = T::one() / width;
        Self::new(m_min, m_min + width * T::from_count(n_cells as u64), values, T::zero())
    }

    pub fn is_uniform(&self) -> bool {
        self.nodes.is_none()
    }

    /// Cell width of a uniform mesh, mean dual-cell width otherwise.
    pub fn width(&self) -> T {
        match &self.nodes {
            None => (self.m_max - self.m_min) / T::from_count(self.n_cells as u64),
            Some(_) => (self.m_max - self.m_min) / T::from_count(self.n_cells as u64 - 1),
        }
    }

    pub fn center(&self, j: usize) -> T {
        match &self.nodes {
            None => self.m_min + (T::from_count(j as u64) + T::half()) * self.width(),
            Some(x) => x[j],
        }
    }

    /// Length of the cell owned by `j`.
    pub fn cell_width(&self, j: usize) -> T {
        match &self.nodes {
            None => self.width(),
            Some(x) => {
                let left = if j == 0 { x[0] } else { (x[j - 1] + x[j]) * T::half() };
                let right = if j + 1 == x.len() { x[j] } else { (x[j] + x[j + 1]) * T::half() };
                right - left
            }
        }
    }

    pub fn centers(&self) -> Vec<T> {
        (0..self.n_cells).map(|j| self.center(j)).collect()
    }

    /// Probability held by each cell.
    pub fn masses(&self) -> Vec<T> {
        self.values
            .iter()
            .enumerate()
            .map(|(j, &f)| f * self.cell_width(j))
            .collect()
    }

    pub fn mass(&self) -> T {
        self.masses().into_iter().sum()
    }

    pub fn mean(&self) -> T {
        self.masses()
            .into_iter()
            .enumerate()
            .map(|(j, p)| self.center(j) * p)
            .sum::<T>()
            / self.mass()
    }

    pub fn variance(&self) -> T {
        let mean = self.mean();
        self.masses()
            .into_iter()
            .enumerate()
            .map(|(j, p)| {
                let x = self.center(j) - mean;
                x * x * p
            })
            .sum::<T>()
            / self.mass()
    }

    /// `sum |f - g| dm` against another density on the same mesh.
    pub fn l1_distance(&self, other: &Self) -> Result<T> {
        if self.n_cells != other.n_cells {
            return Err(Error::invalid("n_cells", "grids differ"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .enumerate()
            .map(|(j, (&a, &b))| (a - b).abs() * self.cell_width(j))
            .sum::<T>())
    }
}

/// Heat-kernel solution from a unit point mass at `m = m0`, evaluated at the
/// points `m_grid` (a uniform mesh of cell centres).
pub fn closed_form_solution<T: Real>(coeffs: &FPCoefficients<T>, tau: T, m_grid: &[T]) -> Result<GridFunction<T>> {
    if m_grid.len() < 2 {
        return Err(Error::invalid("m_grid", "need at least two points"));
    }
    if coeffs.has_multiplicative_noise(tau) {
        return Err(Error::invalid("coeffs", "closed form requires c = 0"));
    }
    let m0 = coeffs.origin.map_or(T::zero(), |(_, s)| s.m0);
    let cov = change_of_variables(coeffs, &[tau])?[0];
    let step = m_grid[1] - m_grid[0];
    let y0 = m0;
    let values = if cov.tau_heat == T::zero() {
        m_grid
            .iter()
            .map(|&m| {
                if (cov.y(m) - y0).abs() <= cov.u * step * T::half() {
                    T::one() / step
                } else {
                    T::zero()
                }
            })
            .collect()
    } else {
        let four_s = T::lit(4.0) * cov.tau_heat;
        let norm = cov.u / (T::PI() * four_s).sqrt();
        m_grid
            .iter()
            .map(|&m| {
                let y = cov.y(m) - y0;
                norm * (-(y * y) / four_s).exp()
            })
            .collect()
    };
    let half = step * T::half();
    GridFunction::new(m_grid[0] - half, m_grid[m_grid.len() - 1] + half, values, tau)
}

/// Mesh the solver advances on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Mesh moving with the characteristics, pure (implicit) diffusion.
    #[default]
    Characteristic,
    /// Fixed mesh in `m`, explicit upwind drift and implicit diffusion.
    Lab,
}

impl std::str::FromStr for Frame {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "characteristic" => Ok(Frame::Characteristic),
            "lab" => Ok(Frame::Lab),
            other => Err(Error::invalid("frame", format!("unknown frame `{other}`"))),
        }
    }
}

/// Summary of a solver run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: String,
    pub frame: Frame,
    pub n_cells: usize,
    pub dt: f64,
    pub steps: usize,
    pub mass_error: f64,
    pub min_value: f64,
    pub moments: GridMoments,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridMoments {
    pub mean: f64,
    pub variance: f64,
}

const MASS_TOL: f64 = 1e-8;
const NEGATIVE_TOL: f64 = 1e-12;
const LAB_WALL_TOL: f64 = 1e-8;

/// Advances `f0` to `tau_final` in the characteristic frame.
pub fn solve_finite_difference<T: Real>(
    coeffs: &FPCoefficients<T>,
    f0: &GridFunction<T>,
    tau_final: T,
    dt: T,
) -> Result<GridFunction<T>> {
    Ok(solve_finite_difference_with(coeffs, f0, tau_final, dt, Frame::Characteristic)?.0)
}

pub fn solve_finite_difference_with<T: Real>(
    coeffs: &FPCoefficients<T>,
    f0: &GridFunction<T>,
    tau_final: T,
    dt: T,
    frame: Frame,
) -> Result<(GridFunction<T>, RunRecord)> {
    let t0 = f0.time;
    if !(tau_final >= t0) || !tau_final.is_finite() {
        return Err(Error::invalid("tau_final", format!("{tau_final} is before the initial time {t0}")));
    }
    if !(dt > T::zero()) {
        return Err(Error::invalid("dt", format!("{dt} violates dt > 0")));
    }
    if frame == Frame::Characteristic && t0 != T::zero() {
        return Err(Error::invalid("f0", "characteristic frame starts at time 0"));
    }
    if f0.values.iter().any(|&v| !(v >= T::zero())) {
        return Err(Error::invalid("f0", "initial density must be nonnegative"));
    }
    let mode = match frame {
        Frame::Lab => Mode::Lab,
        Frame::Characteristic if coeffs.has_multiplicative_noise(tau_final) => {
            let start = edge_coordinate(coeffs, &change_of_variables(coeffs, &[T::zero()])?[0])?;
            let first_gap = f0.center(1) - f0.center(0);
            if !f0.is_uniform() && (f0.center(0) - start).abs() <= first_gap * T::lit(1e-6) {
                Mode::Anchored
            } else {
                Mode::Edge
            }
        }
        Frame::Characteristic => Mode::Free,
    };
    if mode == Mode::Lab && !f0.is_uniform() {
        return Err(Error::invalid("f0", "the lab frame needs a uniform mesh"));
    }
    let span = tau_final - t0;
    let steps = if span == T::zero() {
        0
    } else {
        (span / dt).ceil().to_usize().ok_or(Error::invalid("dt", "too many steps"))?.max(1)
    };
    let step = if steps == 0 { dt } else { span / T::from_count(steps as u64) };

    let n = f0.n_cells;
    let mut mass = f0.masses();
    let volumes: Vec<T> = (0..n).map(|j| f0.cell_width(j)).collect();
    let mass0: T = mass.iter().copied().sum();
    let mut min_value = f0.values.iter().copied().fold(T::infinity(), T::min);

    // coefficient samples at step ends and midpoints for Simpson integration
    let nodes: Vec<T> = (0..=2 * steps)
        .map(|k| t0 + step * T::half() * T::from_count(k as u64))
        .collect();
    let covs = match mode {
        Mode::Lab => Vec::new(),
        _ => change_of_variables(coeffs, &nodes)?,
    };
    let edge: Vec<T> = match mode {
        Mode::Anchored => covs.iter().map(|cv| edge_coordinate(coeffs, cv)).collect::<Result<_>>()?,
        _ => Vec::new(),
    };
    // anchored meshes measure distance from the edge
    let positions: Vec<T> = match mode {
        Mode::Anchored => (0..n).map(|j| f0.center(j) - edge[0]).collect(),
        _ => f0.centers(),
    };
    let mut shifted = vec![T::zero(); n];
    let gaps: Vec<T> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let mut solver = Tridiagonal::new(n);
    let sixth = step / T::lit(6.0);
    let simpson = |g: &dyn Fn(usize) -> T, k: usize| {
        sixth * (g(2 * k) + T::lit(4.0) * g(2 * k + 1) + g(2 * k + 2))
    };
    // drift-free diffusion coefficient D = c_hat y + d_hat at a time node
    let hat = |i: usize| {
        let cv = &covs[i];
        let c = (coeffs.c)(nodes[i]) * cv.u;
        (c, c * cv.shift + (coeffs.d)(nodes[i]) * cv.u * cv.u)
    };

    let mut diffusion = vec![T::zero(); n];
    for k in 0..steps {
        match mode {
            Mode::Lab => {
                let a_int = simpson(&|i| (coeffs.a)(nodes[i]), k);
                let b_int = simpson(&|i| (coeffs.b)(nodes[i]), k);
                upwind_drift(&mut mass, &positions, gaps[0], a_int, b_int)?;
                let c_int = simpson(&|i| (coeffs.c)(nodes[i]), k);
                let d_int = simpson(&|i| (coeffs.d)(nodes[i]), k);
                for (dj, &x) in diffusion.iter_mut().zip(&positions) {
                    *dj = c_int * x + d_int;
                }
            }
            Mode::Free => {
                let c_int = simpson(&|i| hat(i).0, k);
                let d_int = simpson(&|i| hat(i).1, k);
                for (dj, &x) in diffusion.iter_mut().zip(&positions) {
                    *dj = c_int * x + d_int;
                }
            }
            Mode::Anchored => {
                // the edge moves left in the drift-free frame, so mass drifts
                // away from it; half of that motion precedes the diffusion and
                // half follows it
                let half = edge[2 * k] - edge[2 * k + 1];
                shift_masses(&mut mass, &mut shifted, &positions, half);
                let c_int = simpson(&|i| hat(i).0, k);
                for (dj, &x) in diffusion.iter_mut().zip(&positions) {
                    *dj = c_int * x;
                }
                diffusion[n - 1] = T::zero();
            }
            Mode::Edge => {
                // below the moving edge nothing diffuses; mass that reaches
                // the edge stays where it is until the edge has moved past it
                let h = [hat(2 * k), hat(2 * k + 1), hat(2 * k + 2)];
                for (dj, &x) in diffusion.iter_mut().zip(&positions) {
                    let at = |(c, d): (T, T)| (c * x + d).max(T::zero());
                    *dj = sixth * (at(h[0]) + T::lit(4.0) * at(h[1]) + at(h[2]));
                }
                // the end nodes keep what reaches them, so the mesh ends add
                // no boundary terms to the moments
                diffusion[0] = T::zero();
                diffusion[n - 1] = T::zero();
            }
        }
        if let Some((x, v)) = positions.iter().zip(&diffusion).find(|(_, v)| !(**v >= T::zero())) {
            return Err(Error::Numerical(format!(
                "diffusion coefficient {v} is negative at {x}: the mesh leaves the parabolic region"
            )));
        }
        solver.implicit_diffusion_step(&diffusion, &volumes, &gaps, &mut mass)?;
        if mode == Mode::Anchored {
            let half = edge[2 * k + 1] - edge[2 * k + 2];
            shift_masses(&mut mass, &mut shifted, &positions, half);
        }

        let low = mass
            .iter()
            .zip(&volumes)
            .map(|(&p, &v)| p / v)
            .fold(T::infinity(), T::min);
        min_value = min_value.min(low);
        let high = mass.iter().copied().fold(T::zero(), T::max);
        if low < -T::lit(NEGATIVE_TOL) * high.max(T::one()) {
            return Err(Error::Numerical(format!(
                "negative density {low} after step {k} at t = {}",
                nodes[2 * k + 2]
            )));
        }
        let total: T = mass.iter().copied().sum();
        if ((total - mass0) / mass0).abs() > T::lit(MASS_TOL) {
            return Err(Error::Numerical(format!(
                "mass drifted from {mass0} to {total} after step {k}"
            )));
        }
    }

    if mode == Mode::Lab {
        // zero-flux walls only stand in for an unbounded line while they stay empty
        let wall = mass[0].max(mass[mass.len() - 1]) / mass0;
        if wall > T::lit(LAB_WALL_TOL) {
            return Err(Error::Numerical(format!(
                "fraction {wall} of the mass sits in a boundary cell of the lab mesh; \
                 use the characteristic frame or a finer mesh"
            )));
        }
    }
    let density = |u: T| -> Vec<T> { mass.iter().zip(&volumes).map(|(&p, &v)| p * u / v).collect() };
    let out = match mode {
        Mode::Lab => GridFunction::new(f0.m_min, f0.m_max, density(T::one()), tau_final)?,
        _ => {
            let end = covs.last().copied().unwrap_or(ChangeOfVariables {
                time: t0,
                u: T::one(),
                shift: T::zero(),
                tau_heat: T::zero(),
            });
            if mode == Mode::Anchored {
                let base = edge[edge.len() - 1];
                let nodes = positions.iter().map(|&x| end.m(base + x)).collect();
                GridFunction::on_nodes(nodes, density(end.u), tau_final)?
            } else if f0.is_uniform() {
                GridFunction::new(end.m(f0.m_min), end.m(f0.m_max), density(end.u), tau_final)?
            } else {
                let nodes = positions.iter().map(|&y| end.m(y)).collect();
                GridFunction::on_nodes(nodes, density(end.u), tau_final)?
            }
        }
    };
    let record = RunRecord {
        scheme: "backward-euler".into(),
        frame,
        n_cells: out.n_cells,
        dt: step.as_f64(),
        steps,
        mass_error: (out.mass() - mass0).as_f64(),
        min_value: min_value.as_f64(),
        moments: GridMoments {
            mean: out.mean().as_f64(),
            variance: out.variance().as_f64(),
        },
    };
    Ok((out, record))
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    /// drift-free mesh, `c = 0`
    Free,
    /// drift-free mesh crossed by the edge `c u y + c u B + d u^2 = 0`
    Edge,
    /// node mesh carried along with the edge
    Anchored,
    Lab,
}

/// Drift-free coordinate of the point where the diffusion coefficient vanishes.
fn edge_coordinate<T: Real>(coeffs: &FPCoefficients<T>, cv: &ChangeOfVariables<T>) -> Result<T> {
    let c = (coeffs.c)(cv.time);
    if !(c > T::zero()) {
        return Err(Error::invalid("coeffs", "c must stay positive once it is nonzero"));
    }
    Ok(-cv.shift - (coeffs.d)(cv.time) * cv.u / c)
}

/// Moves every node mass by `distance >= 0`, splitting it linearly between the
/// two nodes around its new position. Mass past the last node stays there.
fn shift_masses<T: Real>(mass: &mut [T], scratch: &mut [T], x: &[T], distance: T) {
    if distance == T::zero() {
        return;
    }
    let n = mass.len();
    scratch.iter_mut().for_each(|v| *v = T::zero());
    let mut right = 1;
    for j in 0..n {
        let p = mass[j];
        if p == T::zero() {
            continue;
        }
        let target = x[j] + distance;
        while right < n && x[right] < target {
            right += 1;
        }
        if right == n {
            scratch[n - 1] += p;
            continue;
        }
        let left = right - 1;
        let frac = (target - x[left]) / (x[right] - x[left]);
        scratch[left] += p * (T::one() - frac);
        scratch[right] += p * frac;
    }
    mass.copy_from_slice(scratch);
}

/// Explicit upwind transport of cell masses over one step on a uniform mesh.
/// `a_int` and `b_int` are the step integrals of the drift coefficients.
fn upwind_drift<T: Real>(mass: &mut [T], centers: &[T], width: T, a_int: T, b_int: T) -> Result<()> {
    let n = mass.len();
    let mut courant = T::zero();
    let mut incoming = T::zero();
    let mut update = Vec::with_capacity(n);
    for j in 0..n {
        let outgoing = if j + 1 < n {
            let face = (centers[j] + centers[j + 1]) * T::half();
            let v = (a_int * face + b_int) / width;
            courant = courant.max(v.abs());
            if v >= T::zero() { v * mass[j] } else { v * mass[j + 1] }
        } else {
            T::zero()
        };
        update.push(incoming - outgoing);
        incoming = outgoing;
    }
    if courant > T::lit(LAB_CFL) {
        return Err(Error::invalid(
            "dt",
            format!("drift Courant number {courant} exceeds {LAB_CFL}"),
        ));
    }
    for (p, du) in mass.iter_mut().zip(update) {
        *p += du;
    }
    Ok(())
}

/// Courant limit of the explicit drift in the lab frame.
pub const LAB_CFL: f64 = 0.4;

/// Backward Euler solver for `f_t = (D f)_xx` on node masses with zero-flux ends.
struct Tridiagonal<T> {
    sub: Vec<T>,
    diag: Vec<T>,
    sup: Vec<T>,
    scratch: Vec<T>,
}

impl<T: Real> Tridiagonal<T> {
    fn new(n: usize) -> Self {
        Self {
            sub: vec![T::zero(); n],
            diag: vec![T::zero(); n],
            sup: vec![T::zero(); n],
            scratch: vec![T::zero(); n],
        }
    }

    /// One implicit step for the masses `p`. The flux between neighbours is
    /// `(D_{j+1} p_{j+1} / V_{j+1} - D_j p_j / V_j) / gap_j`, where `d` holds
    /// the step integrals of `D`. Every column of the matrix sums to one, so
    /// mass is preserved, and it is an M-matrix, so positivity is.
    fn implicit_diffusion_step(&mut self, d: &[T], volumes: &[T], gaps: &[T], p: &mut [T]) -> Result<()> {
        let n = p.len();
        for j in 0..n {
            let k = d[j] / volumes[j];
            let left = if j > 0 { k / gaps[j - 1] } else { T::zero() };
            let right = if j + 1 < n { k / gaps[j] } else { T::zero() };
            self.diag[j] = T::one() + left + right;
            // column j feeds rows j - 1 and j + 1
            if j > 0 {
                self.sup[j - 1] = -left;
            }
            if j + 1 < n {
                self.sub[j + 1] = -right;
            }
        }
        self.sub[0] = T::zero();
        self.sup[n - 1] = T::zero();
        // Thomas algorithm
        let c = &mut self.scratch;
        let mut denom = self.diag[0];
        c[0] = self.sup[0] / denom;
        p[0] /= denom;
        for j in 1..n {
            denom = self.diag[j] - self.sub[j] * c[j - 1];
            if !(denom > T::zero()) {
                return Err(Error::Numerical("tridiagonal elimination lost its pivot".into()));
            }
            c[j] = self.sup[j] / denom;
            p[j] = (p[j] - self.sub[j] * p[j - 1]) / denom;
        }
        for j in (0..n - 1).rev() {
            let next = p[j + 1];
            p[j] -= c[j] * next;
        }
        Ok(())
    }
}

/// Initial mesh for a solve up to `tau` holding a unit point mass at `m0`.
///
/// The mesh has `n_cells` cells and reaches twelve standard deviations past the
/// final mean. In the characteristic frame it is laid out in the drift-free
/// coordinate.
///
/// For the Lea-Coulson truncation the edge of the parabolic region, where the
/// diffusion vanishes, moves left through the drift-free frame. When it travels
/// far compared with the final spread, the mesh stays put and the edge sweeps
/// through it. Half of the nodes then cover the path of the edge uniformly. When
/// the edge barely moves, most of the mass clings to it, and the mesh starts on
/// the edge, is carried along with it and refines geometrically towards it.
/// Either way the outer nodes grow geometrically out to the exponential tail,
/// and the point mass is split between its two nearest nodes.
pub fn initial_grid<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau: T,
    n_cells: usize,
    frame: Frame,
) -> Result<GridFunction<T>> {
    let coeffs = build_coefficients(setting, scaled)?;
    let m0 = scaled.m0;
    let var = variance_scaled(setting, scaled, tau)?;
    let spread = T::lit(12.0);
    let (lower, upper) = match frame {
        Frame::Characteristic => {
            let cov = change_of_variables(&coeffs, &[tau])?[0];
            let half = spread * cov.u * var.sqrt();
            if coeffs.has_multiplicative_noise(tau) {
                let times: Vec<T> = (0..=256).map(|i| tau * T::lit(i as f64 / 256.0)).collect();
                let path = change_of_variables(&coeffs, &times)?
                    .iter()
                    .map(|cv| edge_coordinate(&coeffs, cv))
                    .collect::<Result<Vec<T>>>()?;
                let start = path[0];
                let low = path.iter().copied().fold(start, T::min);
                // survivors of the Feller part are exponential with this scale
                let tail = T::half() * (scaled.gamma * tau).exp_m1();
                let high = m0 + half + T::lit(TAIL_SCALES) * cov.u * tail;
                if start - low < T::lit(ANCHOR_RATIO) * half / spread {
                    return anchored_grid(start, m0, high - start, n_cells);
                }
                let fine = start + (start - low).max(m0 - start);
                return edge_grid(m0, low, fine, high, n_cells);
            }
            (m0 - half, m0 + half)
        }
        Frame::Lab => {
            let mean = mean_scaled(scaled, tau)?;
            let sd = var.sqrt();
            (m0.min(mean) - spread * sd, m0.max(mean) + spread * sd)
        }
    };
    if !(upper > lower) {
        return Err(Error::invalid("tau", "solution has no spread; nothing to solve"));
    }
    GridFunction::point_mass(m0, lower, upper, n_cells)
}

/// Multiples of the exponential tail scale kept inside the Lea-Coulson mesh.
const TAIL_SCALES: f64 = 30.0;

/// Largest travel of the edge, in final standard deviations, for which the
/// mesh is carried along with the edge.
const ANCHOR_RATIO: f64 = 1.0;
/// Node spacing of an anchored mesh grows by `1 + GRADING / n` per node.
const GRADING: f64 = 10.0;

fn anchored_grid<T: Real>(edge: T, m0: T, reach: T, n_cells: usize) -> Result<GridFunction<T>> {
    if n_cells < 4 {
        return Err(Error::invalid("n_cells", "need at least 4 cells"));
    }
    if !(m0 >= edge) || !(reach > m0 - edge) {
        return Err(Error::invalid("m0", format!("{m0} lies outside the parabolic region")));
    }
    let rate = T::lit(GRADING) / T::from_count(n_cells as u64);
    let total = (rate * T::from_count(n_cells as u64 - 1)).exp_m1();
    let nodes: Vec<T> = (0..n_cells)
        .map(|j| edge + reach * (rate * T::from_count(j as u64)).exp_m1() / total)
        .collect();
    point_mass_on(nodes, m0)
}

fn point_mass_on<T: Real>(nodes: Vec<T>, m0: T) -> Result<GridFunction<T>> {
    let n = nodes.len();
    let right = nodes.partition_point(|&x| x <= m0).clamp(1, n - 1);
    let left = right - 1;
    let frac = (m0 - nodes[left]) / (nodes[right] - nodes[left]);
    let mut g = GridFunction::on_nodes(nodes, vec![T::zero(); n], T::zero())?;
    g.values[left] = (T::one() - frac) / g.cell_width(left);
    g.values[right] = frac / g.cell_width(right);
    Ok(g)
}

/// Node mesh on `[low, high]`: uniform on `[low, fine]` with half the nodes,
/// geometric beyond. Holds a unit point mass at `m0`.
fn edge_grid<T: Real>(m0: T, low: T, fine: T, high: T, n_cells: usize) -> Result<GridFunction<T>> {
    if n_cells < 4 {
        return Err(Error::invalid("n_cells", "need at least 4 cells"));
    }
    if !(low <= m0 && m0 < high && low < fine) {
        return Err(Error::invalid("m0", format!("{m0} lies outside the parabolic region")));
    }
    let n_fine = n_cells / 2;
    let spacing = (fine - low) / T::from_count(n_fine as u64 - 1);
    let rest = n_cells - n_fine;
    let remaining = high - fine;
    let mut nodes: Vec<T> = (0..n_fine).map(|j| low + spacing * T::from_count(j as u64)).collect();
    if remaining <= spacing * T::from_count(rest as u64) {
        let spacing = (high - low) / T::from_count(n_cells as u64 - 1);
        nodes = (0..n_cells).map(|j| low + spacing * T::from_count(j as u64)).collect();
    } else {
        // spacing * (r + r^2 + ... + r^rest) = remaining, solved for ln r
        let reach = |lr: T| {
            let r = lr.exp();
            spacing * r * (lr * T::from_count(rest as u64)).exp_m1() / lr.exp_m1()
        };
        let (mut a, mut b) = (T::zero(), T::one());
        while reach(b) < remaining {
            b *= T::two();
        }
        for _ in 0..200 {
            let mid = (a + b) * T::half();
            if mid <= a || mid >= b {
                break;
            }
            if reach(mid) < remaining {
                a = mid;
            } else {
                b = mid;
            }
        }
        let r = b.exp();
        let mut x = nodes[n_fine - 1];
        let mut gap = spacing;
        for _ in 0..rest {
            gap *= r;
            x += gap;
            nodes.push(x);
        }
    }
    point_mass_on(nodes, m0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaled(g: f64, g1: f64, nu: f64) -> ScaledParams<f64> {
        ScaledParams::new(g, g1, nu, 1.0, 1.0, 0.0).unwrap()
    }

    #[test]
    fn coefficient_examples() {
        let fp3 = build_coefficients(Setting::LeaCoulson, &scaled(1.0, 1.0, 1.0)).unwrap();
        assert_eq!([(fp3.a)(0.0), (fp3.b)(0.0), (fp3.c)(0.0), (fp3.d)(0.0)], [1.0, 1.0, 0.5, 0.5]);

        let fp1 = build_coefficients(Setting::LuriaDelbruck, &scaled(2.0, 1.0, 0.0)).unwrap();
        for t in [0.0, 1.0] {
            assert_eq!([(fp1.a)(t), (fp1.b)(t), (fp1.c)(t), (fp1.d)(t)], [2.0, 0.0, 0.0, 0.0]);
        }

        let fp2 = build_coefficients(Setting::Simplified, &scaled(0.0, 1.0, 0.5)).unwrap();
        let t: f64 = 0.7;
        assert_eq!((fp2.a)(t), 0.0);
        assert!(((fp2.b)(t) - 0.5 * t.exp()).abs() < 1e-15);
        assert!(((fp2.d)(t) - 0.25 * t.exp()).abs() < 1e-15);
    }

    #[test]
    fn change_of_variables_starts_at_identity() {
        for setting in Setting::ALL {
            let c = build_coefficients(setting, &scaled(1.0, 2.0, 0.4)).unwrap();
            let cv = change_of_variables(&c, &[0.0]).unwrap()[0];
            assert_eq!((cv.u, cv.shift, cv.tau_heat), (1.0, 0.0, 0.0));
            assert_eq!(cv.y(3.5), 3.5);
        }
    }

    #[test]
    fn closed_form_integrals_match_ode_route() {
        let times = [0.3, 1.0, 2.5];
        for setting in Setting::ALL {
            let known = build_coefficients(setting, &scaled(0.8, 1.9, 0.4)).unwrap();
            let mut blind = known.clone();
            blind.origin = None;
            let a = change_of_variables(&known, &times).unwrap();
            let b = change_of_variables(&blind, &times).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x.u - y.u).abs() < 1e-9 * x.u);
                assert!((x.shift - y.shift).abs() < 1e-8 * x.shift.abs().max(1e-12));
                assert!((x.tau_heat - y.tau_heat).abs() < 1e-8 * x.tau_heat);
            }
            for w in a.windows(2) {
                assert!(w[1].tau_heat >= w[0].tau_heat);
            }
        }
    }

    #[test]
    fn constant_coefficients_give_poisson_like_gaussian() {
        // gamma = 0 and gamma1 -> 0: b = nu N0, d = nu N0 / 2
        let c = FPCoefficients::constant(0.0, 1.5, 0.0, 0.75);
        let tau = 2.0;
        let grid: Vec<f64> = (0..8001).map(|i| -20.0 + i as f64 * 0.005).collect();
        let f = closed_form_solution(&c, tau, &grid).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-9);
        assert!((f.mean() - 3.0).abs() < 1e-9);
        assert!((f.variance() - 3.0).abs() < 1e-4);
    }

    #[test]
    fn fp2_closed_form_moments() {
        let s = scaled(0.5, 1.0, 2.0);
        let c = build_coefficients(Setting::Simplified, &s).unwrap();
        let mean = mean_scaled(&s, 1.0).unwrap();
        let grid: Vec<f64> = (0..6001).map(|i| mean - 30.0 + i as f64 * 0.01).collect();
        let f = closed_form_solution(&c, 1.0, &grid).unwrap();
        assert!((f.mean() - mean).abs() < 1e-9 * mean);
        assert!((f.variance() - mean).abs() < 1e-4 * mean);
    }

    #[test]
    fn fp1_closed_form_matches_moments() {
        let s = scaled(2.5, 3.0, 1e-7);
        let c = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
        let mean = mean_scaled(&s, 6.7).unwrap();
        let var = variance_scaled(Setting::LuriaDelbruck, &s, 6.7).unwrap();
        let sd = var.sqrt();
        let n = 20_001;
        let grid: Vec<f64> = (0..n).map(|i| mean - 12.0 * sd + 24.0 * sd * i as f64 / (n - 1) as f64).collect();
        let f = closed_form_solution(&c, 6.7, &grid).unwrap();
        assert!(((f.mean() - mean) / mean).abs() < 1e-6);
        assert!(((f.variance() - var) / var).abs() < 1e-6);
    }

    #[test]
    fn closed_form_rejects_multiplicative_noise() {
        let c = build_coefficients(Setting::LeaCoulson, &scaled(1.0, 2.0, 1.0)).unwrap();
        assert!(closed_form_solution(&c, 1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn closed_form_at_time_zero_is_point_mass() {
        let c = FPCoefficients::constant(0.0, 1.0, 0.0, 0.5);
        let f = closed_form_solution(&c, 0.0, &[-0.1f64, 0.0, 0.1]).unwrap();
        assert_eq!(f.values[0], 0.0);
        assert!((f.values[1] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn manufactured_residual_is_second_order() {
        // f = u G(y, s) must solve f_t + ((a m + b) f)_m = d f_mm
        let s = scaled(0.7, 1.3, 0.9);
        let c = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
        let f = |t: f64, m: f64| closed_form_solution(&c, t, &[m, m + 1.0]).unwrap().values[0];
        let (t, m) = (1.0, mean_scaled(&s, 1.0).unwrap() + 0.3);
        let residual = |h: f64| {
            let ft = (f(t + h, m) - f(t - h, m)) / (2.0 * h);
            let flux = |x: f64| ((c.a)(t) * x + (c.b)(t)) * f(t, x);
            let fm = (flux(m + h) - flux(m - h)) / (2.0 * h);
            let fmm = (f(t, m + h) - 2.0 * f(t, m) + f(t, m - h)) / (h * h);
            (ft + fm - (c.d)(t) * fmm).abs()
        };
        let (r1, r2) = (residual(1e-2), residual(5e-3));
        assert!(r1 < 1e-3, "{r1}");
        let order = (r1 / r2).log2();
        assert!(order > 1.8, "order {order}");
    }

    #[test]
    fn zero_coefficients_leave_density_unchanged() {
        let c = FPCoefficients::constant(0.0, 0.0, 0.0, 0.0);
        let f0 = GridFunction::point_mass(0.0, -1.0, 1.0, 21).unwrap();
        for frame in [Frame::Characteristic, Frame::Lab] {
            let (f, rec) = solve_finite_difference_with(&c, &f0, 1.0, 0.1, frame).unwrap();
            assert_eq!(f.values, f0.values);
            assert_eq!(rec.steps, 10);
        }
    }

    #[test]
    fn point_mass_is_centred() {
        let f = GridFunction::<f64>::point_mass(0.0, -1.0, 1.0, 64).unwrap();
        let j = f.values.iter().position(|&v| v > 0.0).unwrap();
        assert!(f.center(j).abs() < 1e-15);
        assert!(f.m_min >= -1.0 && f.m_max <= 1.0 + f.width());
        assert!((f.mass() - 1.0).abs() < 1e-14);
        assert!(GridFunction::point_mass(2.0, -1.0, 1.0, 64).is_err());
    }

    #[test]
    fn characteristic_solver_tracks_fp1_moments() {
        let s = scaled(2.5, 3.0, 1e-7);
        let c = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
        let f0 = initial_grid(Setting::LuriaDelbruck, &s, 6.7, 512, Frame::Characteristic).unwrap();
        let (f, rec) = solve_finite_difference_with(&c, &f0, 6.7, 0.01, Frame::Characteristic).unwrap();
        let mean = mean_scaled(&s, 6.7).unwrap();
        let var = variance_scaled(Setting::LuriaDelbruck, &s, 6.7).unwrap();
        assert!(((f.mean() - mean) / mean).abs() < 1e-8, "{}", f.mean());
        assert!(((f.variance() - var) / var).abs() < 1e-6, "{}", f.variance());
        assert!(rec.mass_error.abs() < 1e-12 && rec.min_value >= 0.0);
    }

    #[test]
    fn lab_frame_agrees_with_closed_form() {
        let s = scaled(0.3, 0.5, 4.0);
        let c = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
        let f0 = initial_grid(Setting::LuriaDelbruck, &s, 1.0, 800, Frame::Lab).unwrap();
        let dt = 0.0015;
        let (f, _) = solve_finite_difference_with(&c, &f0, 1.0, dt, Frame::Lab).unwrap();
        let exact = closed_form_solution(&c, 1.0, &f.centers()).unwrap();
        let l1 = f.l1_distance(&exact).unwrap();
        assert!(l1 < 0.05, "{l1}");
        assert!((f.mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn lab_frame_reports_mass_at_the_walls() {
        // smearing of the initial cell is amplified by e^{gamma tau} into the walls
        let s = scaled(2.5, 3.0, 1e-7);
        let c = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
        let f0 = initial_grid(Setting::LuriaDelbruck, &s, 6.7, 256, Frame::Lab).unwrap();
        let err = solve_finite_difference_with(&c, &f0, 6.7, 1e-3, Frame::Lab).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)), "{err}");
    }

    #[test]
    fn lab_frame_enforces_courant_limit() {
        let c = FPCoefficients::constant(0.0, 10.0, 0.0, 1.0);
        let f0 = GridFunction::point_mass(0.0, -1.0, 1.0, 21).unwrap();
        let r = solve_finite_difference_with(&c, &f0, 1.0, 0.1, Frame::Lab);
        assert!(matches!(r, Err(Error::InvalidParameter { field: "dt", .. })));
    }

    #[test]
    fn negative_diffusion_is_reported() {
        let c = FPCoefficients::constant(0.0, 0.0, 1.0, 0.1);
        let f0 = GridFunction::point_mass(0.0, -1.0, 1.0, 21).unwrap();
        assert!(matches!(
            solve_finite_difference_with(&c, &f0, 1.0, 0.1, Frame::Lab),
            Err(Error::Numerical(_))
        ));
        // the drift-free frame switches diffusion off below the edge instead
        let f: GridFunction<f64> = solve_finite_difference(&c, &f0, 1.0, 0.1).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-12 && f.mean().abs() < 1e-12);
    }

    #[test]
    fn fp3_grid_respects_parabolicity() {
        let s = scaled(1.0, 1.5, 0.5);
        let c = build_coefficients(Setting::LeaCoulson, &s).unwrap();
        let f0 = initial_grid(Setting::LeaCoulson, &s, 2.0, 400, Frame::Characteristic).unwrap();
        assert!(f0.m_min <= -0.5 && !f0.is_uniform());
        assert!((f0.mean()).abs() < 1e-12 && (f0.mass() - 1.0).abs() < 1e-12);
        let f = solve_finite_difference(&c, &f0, 2.0, 0.01).unwrap();
        assert!((f.mass() - 1.0).abs() < 1e-10);
        assert!(f.values.iter().all(|&v| v >= 0.0));
        let mean = mean_scaled(&s, 2.0).unwrap();
        let var = variance_scaled(Setting::LeaCoulson, &s, 2.0).unwrap();
        assert!(((f.mean() - mean) / mean).abs() < 1e-8, "{} {mean}", f.mean());
        assert!(((f.variance() - var) / var).abs() < 1e-3, "{} {var}", f.variance());
    }
}
