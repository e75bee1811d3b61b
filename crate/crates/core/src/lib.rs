//! Mutation dynamics in growing populations: a kinetic Monte Carlo model with
//! a small parameter `epsilon`, its moment equations, the limit laws as
//! `epsilon -> 0` and the Fokker-Planck approximations.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`.

// comparisons such as `!(x >= 0)` deliberately reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod convergence;
pub mod diffusion;
pub mod error;
pub mod io;
pub mod kinetic;
pub mod model;
pub mod moments;
pub mod ode;
pub mod poisson;
pub mod quad;
pub mod real;
pub mod refdist;

pub use convergence::{run_convergence, ConvergenceConfig, ConvergenceReport, ConvergenceRun, EpsilonResult};
pub use diffusion::{
    build_coefficients, change_of_variables, closed_form_solution, initial_grid, solve_finite_difference,
    solve_finite_difference_with, ChangeOfVariables, FPCoefficients, Frame, GridFunction, GridMoments, RunRecord,
};
pub use error::{Error, Result};
pub use kinetic::{
    simulate_ensemble, simulate_ensemble_with, simulate_path, simulate_sample, EmpiricalDistribution,
    EnsembleOptions, RngStream,
};
pub use model::{normal_population, scale_params, unscale_params, ModelParams, ScaledParams};
pub use moments::{mean_closed, mean_scaled, variance_ode, variance_ode_scaled, variance_scaled, MomentCurve, Setting};
pub use real::Real;
pub use refdist::{
    clone_oracle, ld_characteristic_function, lc_pmf_recursion, pmf_from_cf, pmf_from_cf_auto,
    simplified_characteristic_function, CharFn, LatticePmf,
};

pub type Model = ModelParams<f64>;
pub type Scaled = ScaledParams<f64>;
pub type Curve = MomentCurve<f64>;
pub type Pmf = LatticePmf<f64>;
pub type Histogram = EmpiricalDistribution<f64>;
pub type Grid = GridFunction<f64>;
pub type Coefficients = FPCoefficients<f64>;
pub type Cf = CharFn<f64>;
