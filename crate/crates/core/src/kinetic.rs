//! Exact simulation of the kinetic jump processes.
//!
//! Every sample carries a unit-rate jump clock in unscaled time. At each jump
//! the mutant mass is updated by the rule of the chosen [`Setting`], with the
//! rates evaluated at the jump instant.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{finite, Error, Result};
use crate::model::{normal_population, scale_params, ModelParams, ScaledParams};
use crate::moments::{mean_closed, Setting};
use crate::poisson::sample_poisson;
use crate::real::Real;
use crate::refdist::LatticePmf;

/// Identifies the random stream of one sample: `(seed, stream_id)` always
/// reproduces the same path, different ids give independent streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleState<T> {
    pub m: T,
    pub t: T,
}

/// Applies one jump to `state`. `mean_mutants` is `M(t)` and is only read in
/// the simplified setting.
pub fn jump_update<T: Real, R: Rng + ?Sized>(
    setting: Setting,
    state: SampleState<T>,
    params: &ModelParams<T>,
    mean_mutants: T,
    rng: &mut R,
) -> Result<SampleState<T>> {
    if !(state.m >= T::zero()) {
        return Err(Error::invalid("m", format!("{} violates m >= 0", state.m)));
    }
    let lambda = finite(params.mu * normal_population(params, state.t)?, "mutation rate")?;
    let eta = T::from_count(sample_poisson(rng, lambda)?);
    let m = match setting {
        Setting::LuriaDelbruck => (T::one() + params.beta) * state.m + eta,
        Setting::LeaCoulson => {
            let theta = sample_poisson(rng, params.beta * state.m)?;
            state.m + T::from_count(theta) + eta
        }
        Setting::Simplified => {
            let theta = sample_poisson(rng, params.beta * mean_mutants)?;
            state.m + T::from_count(theta) + eta
        }
    };
    Ok(SampleState {
        m: finite(m, "mutant mass")?,
        t: state.t,
    })
}

/// Exponential(1) waiting time.
fn waiting_time<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -(1.0 - rng.gen::<f64>()).ln()
}

fn run_path<T: Real>(
    setting: Setting,
    params: &ModelParams<T>,
    t_final: T,
    stream: RngStream,
    mut record: impl FnMut(SampleState<T>),
) -> Result<T> {
    let mut rng = stream.rng();
    let mut state = SampleState {
        m: params.m0,
        t: T::zero(),
    };
    record(state);
    loop {
        let t = state.t + T::lit(waiting_time(&mut rng));
        if t > t_final {
            return Ok(state.m);
        }
        state.t = t;
        let mean = match setting {
            Setting::Simplified => mean_closed(params, t)?,
            _ => T::zero(),
        };
        state = jump_update(setting, state, params, mean, &mut rng)?;
        record(state);
    }
}

fn unscaled_horizon<T: Real>(scaled: &ScaledParams<T>, tau_final: T) -> Result<(ModelParams<T>, T)> {
    if !(tau_final >= T::zero()) || !tau_final.is_finite() {
        return Err(Error::invalid(
            "tau_final",
            format!("{tau_final} violates tau_final >= 0"),
        ));
    }
    let params = scale_params(scaled)?;
    Ok((params, finite(scaled.unscaled_time(tau_final), "unscaled horizon")?))
}

/// Simulates one sample and returns the state after every jump, starting
/// with the initial state at `t = 0`.
pub fn simulate_path<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_final: T,
    stream: RngStream,
) -> Result<Vec<SampleState<T>>> {
    let (params, t_final) = unscaled_horizon(scaled, tau_final)?;
    let mut path = Vec::new();
    run_path(setting, &params, t_final, stream, |s| path.push(s))?;
    Ok(path)
}

/// Final mutant mass of one sample.
pub fn simulate_sample<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_final: T,
    stream: RngStream,
) -> Result<T> {
    let (params, t_final) = unscaled_horizon(scaled, tau_final)?;
    run_path(setting, &params, t_final, stream, |_| {})
}

/// Worker control for ensemble runs. `threads: None` uses the global pool.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnsembleOptions {
    pub threads: Option<usize>,
}

/// Evaluates `sample(i)` for `i in 0..n` in parallel and returns the values in
/// index order, so the result does not depend on the schedule.
pub(crate) fn parallel_samples<T, F>(n: usize, opts: EnsembleOptions, sample: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let run = || (0..n as u64).into_par_iter().map(&sample).collect::<Result<Vec<T>>>();
    match opts.threads {
        None => run(),
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::Numerical(format!("cannot build worker pool: {e}")))?
            .install(run),
    }
}

pub fn simulate_ensemble<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_final: T,
    n_samples: usize,
    seed: u64,
) -> Result<EmpiricalDistribution<T>> {
    simulate_ensemble_with(
        setting,
        scaled,
        tau_final,
        n_samples,
        seed,
        EnsembleOptions::default(),
    )
}

pub fn simulate_ensemble_with<T: Real>(
    setting: Setting,
    scaled: &ScaledParams<T>,
    tau_final: T,
    n_samples: usize,
    seed: u64,
    opts: EnsembleOptions,
) -> Result<EmpiricalDistribution<T>> {
    if n_samples == 0 {
        return Err(Error::invalid("n_samples", "need at least one sample"));
    }
    let (params, t_final) = unscaled_horizon(scaled, tau_final)?;
    let values = parallel_samples(n_samples, opts, |i| {
        run_path(setting, &params, t_final, RngStream::new(seed, i), |_| {})
    })?;
    let mut dist = EmpiricalDistribution::from_samples(&values, seed)?;
    dist.setting = Some(setting);
    dist.scaled = Some(*scaled);
    dist.tau = Some(tau_final);
    Ok(dist)
}

/// Integer-binned summary of an ensemble. Bin `k` collects values in
/// `[k - 1/2, k + 1/2)`; only occupied bins are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution<T> {
    /// Occupied bins as `(k, count)`, sorted by `k`.
    pub bins: Vec<(u64, u64)>,
    pub n_samples: u64,
    /// Statistics of the unbinned values.
    pub mean: T,
    pub variance: T,
    pub seed: u64,
    pub setting: Option<Setting>,
    pub scaled: Option<ScaledParams<T>>,
    pub tau: Option<T>,
}

impl<T: Real> EmpiricalDistribution<T> {
    pub fn from_samples(values: &[T], seed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("n_samples", "need at least one sample"));
        }
        let mut counts: BTreeMap<u64, u64> = BTreeMap::new();
        for &v in values {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Numerical(format!("sample value {v} is not a finite mass")));
            }
            let k = (v + T::half())
                .floor()
                .to_u64()
                .ok_or(Error::OutOfRange { what: "histogram bin" })?;
            *counts.entry(k).or_default() += 1;
        }
        let n = T::from_count(values.len() as u64);
        let mean = values.iter().copied().sum::<T>() / n;
        let variance = if values.len() > 1 {
            values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one())
        } else {
            T::zero()
        };
        Ok(Self {
            bins: counts.into_iter().collect(),
            n_samples: values.len() as u64,
            mean,
            variance,
            seed,
            setting: None,
            scaled: None,
            tau: None,
        })
    }

    pub fn probability(&self, k: u64) -> T {
        match self.bins.binary_search_by_key(&k, |&(b, _)| b) {
            Ok(i) => self.fraction(self.bins[i].1),
            Err(_) => T::zero(),
        }
    }

    fn fraction(&self, count: u64) -> T {
        T::from_count(count) / T::from_count(self.n_samples)
    }

    /// `(k, p_k)` for every occupied bin.
    pub fn probabilities(&self) -> impl Iterator<Item = (u64, T)> + '_ {
        self.bins.iter().map(|&(k, c)| (k, self.fraction(c)))
    }

    pub fn total_probability(&self) -> T {
        self.probabilities().map(|(_, p)| p).sum()
    }

    pub fn max_bin(&self) -> u64 {
        self.bins.last().map_or(0, |&(k, _)| k)
    }

    /// Total variation distance to another histogram over the union of bins.
    pub fn tv_distance(&self, other: &Self) -> T {
        let (mut i, mut j) = (0, 0);
        let mut sum = T::zero();
        while i < self.bins.len() || j < other.bins.len() {
            let a = self.bins.get(i).copied();
            let b = other.bins.get(j).copied();
            match (a, b) {
                (Some((ka, ca)), Some((kb, cb))) if ka == kb => {
                    sum += (self.fraction(ca) - other.fraction(cb)).abs();
                    i += 1;
                    j += 1;
                }
                (Some((ka, ca)), Some((kb, _))) if ka < kb => {
                    sum += self.fraction(ca);
                    i += 1;
                }
                (Some((_, ca)), None) => {
                    sum += self.fraction(ca);
                    i += 1;
                }
                (_, Some((_, cb))) => {
                    sum += other.fraction(cb);
                    j += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        sum * T::half()
    }

    /// Total variation distance to a truncated pmf. Mass beyond `k_max` is
    /// compared in aggregate against the pmf residual.
    pub fn tv_distance_pmf(&self, pmf: &LatticePmf<T>) -> T {
        let k_max = pmf.k_max() as u64;
        let mut sum = T::zero();
        let mut hist_tail = T::zero();
        let mut next = 0usize;
        for (k, p) in self.probabilities() {
            if k > k_max {
                hist_tail += p;
                continue;
            }
            for q in &pmf.probs[next..k as usize] {
                sum += q.abs();
            }
            sum += (p - pmf.probs[k as usize]).abs();
            next = k as usize + 1;
        }
        for q in pmf.probs.iter().skip(next) {
            sum += q.abs();
        }
        sum += (hist_tail - pmf.residual.max(T::zero())).abs();
        sum * T::half()
    }
}
