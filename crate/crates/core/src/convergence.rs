//! Convergence of the kinetic ensembles to the limit law as `epsilon -> 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::{simulate_ensemble_with, EmpiricalDistribution, EnsembleOptions};
use crate::model::ScaledParams;
use crate::moments::{variance_ode_scaled, Setting};
use crate::real::Real;
use crate::refdist::{
    clone_oracle_samples, ld_characteristic_function, pmf_from_cf_auto, simplified_characteristic_function,
    LatticePmf,
};

/// Quadrature tolerance of the reference characteristic function.
pub const REFERENCE_QUAD_TOL: f64 = 1e-10;
/// Residual mass the reference inversion aims for.
pub const REFERENCE_RESIDUAL: f64 = 1e-4;
/// Clone-sampler draws for the Lea-Coulson reference.
pub const ORACLE_SAMPLES: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig<T> {
    pub setting: Setting,
    /// `epsilon` is ignored; each run substitutes its own.
    pub scaled: ScaledParams<T>,
    pub tau: T,
    pub n_samples: usize,
    pub seed: u64,
    pub oracle_samples: usize,
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl<T: Real> ConvergenceConfig<T> {
    pub fn new(setting: Setting, scaled: ScaledParams<T>, tau: T, n_samples: usize, seed: u64) -> Self {
        Self {
            setting,
            scaled,
            tau,
            n_samples,
            seed,
            oracle_samples: ORACLE_SAMPLES,
            threads: None,
        }
    }

    fn options(&self) -> EnsembleOptions {
        EnsembleOptions { threads: self.threads }
    }
}

/// Limit law the ensembles are compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reference<T> {
    Pmf(LatticePmf<T>),
    Oracle(EmpiricalDistribution<T>),
}

impl<T: Real> Reference<T> {
    /// Builds the reference for `config`: the inverted characteristic
    /// function where one is available, the clone sampler otherwise.
    pub fn build(config: &ConvergenceConfig<T>) -> Result<Self> {
        let s = &config.scaled;
        match config.setting {
            Setting::LuriaDelbruck => {
                let cf = ld_characteristic_function(s, config.tau, T::lit(REFERENCE_QUAD_TOL))?;
                Ok(Reference::Pmf(pmf_from_cf_auto(&cf, T::lit(REFERENCE_RESIDUAL))?))
            }
            Setting::Simplified => {
                let cf = simplified_characteristic_function(s, config.tau)?;
                Ok(Reference::Pmf(pmf_from_cf_auto(&cf, T::lit(REFERENCE_RESIDUAL))?))
            }
            Setting::LeaCoulson => {
                let values = clone_oracle_samples(
                    config.setting,
                    s,
                    config.tau,
                    config.oracle_samples,
                    config.seed,
                    config.options(),
                )?;
                let mut dist = EmpiricalDistribution::from_samples(&values, config.seed)?;
                dist.setting = Some(config.setting);
                dist.scaled = Some(*s);
                dist.tau = Some(config.tau);
                Ok(Reference::Oracle(dist))
            }
        }
    }

    pub fn method(&self) -> &'static str {
        match self {
            Reference::Pmf(_) => "cf",
            Reference::Oracle(_) => "oracle",
        }
    }

    pub fn tv_distance(&self, hist: &EmpiricalDistribution<T>) -> T {
        match self {
            Reference::Pmf(pmf) => hist.tv_distance_pmf(pmf),
            Reference::Oracle(oracle) => hist.tv_distance(oracle),
        }
    }
}

/// Comparison of one ensemble with the reference and with its moment curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonResult {
    pub epsilon: f64,
    pub tv: f64,
    pub mean: f64,
    pub variance: f64,
    pub theory_mean: f64,
    pub theory_variance: f64,
    /// `(mean - theory_mean) / theory_mean`
    pub mean_error: f64,
    pub variance_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub setting: Setting,
    pub reference: String,
    pub results: Vec<EpsilonResult>,
    /// True when the distance never grows as `epsilon` decreases.
    pub monotone: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceRun<T> {
    pub report: ConvergenceReport,
    pub histograms: Vec<(T, EmpiricalDistribution<T>)>,
    pub reference: Reference<T>,
}

/// Relative error that stays finite when the target is zero.
fn relative(value: f64, target: f64) -> f64 {
    if target == 0.0 {
        value - target
    } else {
        (value - target) / target
    }
}

/// Runs one ensemble per `epsilon` and compares it with the limit law.
pub fn run_convergence<T: Real>(config: &ConvergenceConfig<T>, eps_list: &[T]) -> Result<ConvergenceRun<T>> {
    if eps_list.is_empty() {
        return Err(Error::invalid("eps_list", "need at least one epsilon"));
    }
    if let Some(e) = eps_list.iter().find(|&&e| !(e > T::zero() && e <= T::one())) {
        return Err(Error::invalid("eps_list", format!("{e} is not in (0, 1]")));
    }
    let reference = Reference::build(config)?;
    let grid: Vec<T> = if config.tau > T::zero() {
        vec![T::zero(), config.tau]
    } else {
        vec![T::zero()]
    };

    let mut histograms = Vec::with_capacity(eps_list.len());
    let mut results = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let scaled = config.scaled.with_epsilon(eps)?;
        let hist = simulate_ensemble_with(
            config.setting,
            &scaled,
            config.tau,
            config.n_samples,
            config.seed,
            config.options(),
        )?;
        let curve = variance_ode_scaled(config.setting, &scaled, &grid)?;
        let (theory_mean, theory_variance) = curve.last().expect("nonempty grid");
        let (theory_mean, theory_variance) = (theory_mean.as_f64(), theory_variance.as_f64());
        let (mean, variance) = (hist.mean.as_f64(), hist.variance.as_f64());
        results.push(EpsilonResult {
            epsilon: eps.as_f64(),
            tv: reference.tv_distance(&hist).as_f64(),
            mean,
            variance,
            theory_mean,
            theory_variance,
            mean_error: relative(mean, theory_mean),
            variance_error: relative(variance, theory_variance),
        });
        histograms.push((eps, hist));
    }

    // order by decreasing epsilon to check monotonicity
    let mut order: Vec<usize> = (0..results.len()).collect();
    order.sort_by(|&a, &b| results[b].epsilon.total_cmp(&results[a].epsilon));
    let violations: Vec<String> = order
        .windows(2)
        .filter(|w| results[w[1]].tv > results[w[0]].tv)
        .map(|w| {
            let (coarse, fine) = (&results[w[0]], &results[w[1]]);
            format!(
                "TV grows from {} at epsilon = {} to {} at epsilon = {}",
                coarse.tv, coarse.epsilon, fine.tv, fine.epsilon
            )
        })
        .collect();

    Ok(ConvergenceRun {
        report: ConvergenceReport {
            setting: config.setting,
            reference: reference.method().to_string(),
            results,
            monotone: violations.is_empty(),
            violations,
        },
        histograms,
        reference,
    })
}
