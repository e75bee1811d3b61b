//! Acceptance criteria. Each test prints one `criterion N: PASS|FAIL` line and
//! then asserts, so `cargo test --test acceptance` shows all eight verdicts.

mod common;

use std::sync::OnceLock;

use common::{experiment, raw_moments, report, sampling};
use luria_core::kinetic::simulate_path;
use luria_core::poisson::sample_poisson;
use luria_core::refdist::{clone_oracle_samples, lc_pmf_recursion_unchecked, lc_recursion_gate_distance};
use luria_core::*;
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const TAU: f64 = 6.7;
const SAMPLES: usize = 100_000;
const SEED: u64 = 2024;
const EPS: [f64; 2] = [0.1, 0.01];

fn convergence(setting: Setting) -> &'static ConvergenceRun<f64> {
    static LD: OnceLock<ConvergenceRun<f64>> = OnceLock::new();
    static LC: OnceLock<ConvergenceRun<f64>> = OnceLock::new();
    let (cell, gamma) = match setting {
        Setting::LuriaDelbruck => (&LD, 2.5),
        Setting::LeaCoulson => (&LC, 2.8),
        Setting::Simplified => unreachable!(),
    };
    cell.get_or_init(|| {
        let config = ConvergenceConfig::new(setting, experiment(gamma, 1.0), TAU, SAMPLES, SEED);
        run_convergence(&config, &EPS).unwrap()
    })
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn criterion_1_luria_delbruck_convergence() {
    let r = &convergence(Setting::LuriaDelbruck).report.results;
    let (coarse, fine) = (r[0].tv, r[1].tv);
    let pass = fine < coarse && fine <= 0.03;
    report(1, pass, &format!("LD TV(0.1) = {coarse:.4}, TV(0.01) = {fine:.4} (need < TV(0.1) and <= 0.03)"));
    assert!(pass);
}

#[test]
fn criterion_2_lea_coulson_convergence() {
    let run = convergence(Setting::LeaCoulson);
    let r = &run.report.results;
    let fine = r[1].tv;
    let pass = run.report.monotone && fine <= 0.04;
    report(
        2,
        pass,
        &format!("LC TV(0.1) = {:.4}, TV(0.01) = {fine:.4} (need monotone and <= 0.04)", r[0].tv),
    );
    assert!(pass);
}

#[test]
fn criterion_3_ensemble_moments() {
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for setting in [Setting::LuriaDelbruck, Setting::LeaCoulson] {
        let run = convergence(setting);
        for (res, (eps, hist)) in run.report.results.iter().zip(&run.histograms) {
            let s = hist.scaled.unwrap();
            let raw = raw_moments(setting, &s, TAU, 20_000);
            let theory = sampling(&raw, hist.n_samples as usize);
            // the fourth-order system must reproduce the crate's curves
            assert!(rel(theory.mean, res.theory_mean) < 1e-6, "{setting} {eps}");
            assert!(rel(theory.variance, res.theory_variance) < 1e-6, "{setting} {eps}");
            let z_mean = (res.mean - theory.mean) / theory.se_mean;
            let z_var = (res.variance - theory.variance) / theory.se_variance;
            worst = worst.max(z_mean.abs()).max(z_var.abs());
            lines.push(format!("{}@{eps}: z_mean {z_mean:+.2}, z_var {z_var:+.2}", setting.tag()));
        }
    }
    let pass = worst <= 4.0;
    report(3, pass, &format!("{} (need |z| <= 4)", lines.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_4_characteristic_function_fidelity() {
    let s = experiment(2.5, 1.0);
    let cf = ld_characteristic_function(&s, TAU, 1e-10).unwrap();
    let u = cf.unscale();
    let h = 1e-6;
    let plus = cf.eval_minus_one(h).unwrap();
    let minus = cf.eval_minus_one(-h).unwrap();
    let mean = -(plus - minus).im / (2.0 * h) * u;
    let second = -(plus + minus).re / (h * h) * u * u;
    let m = mean_scaled(&s, TAU).unwrap();
    let m2 = variance_scaled(Setting::LuriaDelbruck, &s, TAU).unwrap() + m * m;
    let at_zero = (cf.eval(0.0).unwrap() - Complex::new(1.0, 0.0)).norm();
    let (e1, e2) = (rel(mean, m), rel(second, m2));
    let pass = e1 <= 1e-4 && e2 <= 1e-4 && at_zero <= 1e-10;
    report(
        4,
        pass,
        &format!("mean rel {e1:.1e}, second moment rel {e2:.1e}, |g(0) - 1| = {at_zero:.1e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_oracle_equivalence() {
    let s = experiment(2.5, 1.0);
    let cf = ld_characteristic_function(&s, TAU, 1e-10).unwrap();
    let n = 1_000_000;
    let values = clone_oracle_samples(Setting::LuriaDelbruck, &s, TAU, n, 77, EnsembleOptions::default()).unwrap();
    let mut worst: f64 = 0.0;
    for xi in [0.1, 0.5, 1.0] {
        // g(xi) = E exp(-i xi m / u)
        let omega = -xi / cf.unscale();
        let (cos, sin): (Vec<f64>, Vec<f64>) = values.iter().map(|&m| ((omega * m).cos(), (omega * m).sin())).unzip();
        let exact = cf.eval(xi).unwrap();
        // exact variances of cos and sin from g(2 xi); sample variances are
        // unreliable under the heavy tail
        let (a, b) = (cf.eval_minus_one(xi).unwrap(), cf.eval_minus_one(2.0 * xi).unwrap());
        let var_cos = b.re / 2.0 - 2.0 * a.re - a.re * a.re;
        let var_sin = -b.re / 2.0 - a.im * a.im;
        for (part, target, var) in [(cos, exact.re, var_cos), (sin, exact.im, var_sin)] {
            let mean = part.iter().sum::<f64>() / n as f64;
            worst = worst.max((mean - target).abs() / (var / n as f64).sqrt());
        }
    }
    let pmf = lc_pmf_recursion_unchecked(1.0, 20_000).unwrap();
    let tv = lc_recursion_gate_distance(&pmf, 1.0).unwrap();
    let pass = worst <= 3.0 && tv <= 0.01;
    report(5, pass, &format!("worst CF deviation {worst:.2} se (need <= 3), recursion TV {tv:.4} (need <= 0.01)"));
    assert!(pass);
}

#[test]
fn criterion_6_diffusion_solvers() {
    let s = experiment(2.5, 1.0);
    let coeffs = build_coefficients(Setting::LuriaDelbruck, &s).unwrap();
    let mut errors = Vec::new();
    for n in [1024, 2048, 4096] {
        let f0 = initial_grid(Setting::LuriaDelbruck, &s, TAU, n, Frame::Characteristic).unwrap();
        let f = solve_finite_difference(&coeffs, &f0, TAU, TAU / (2 * n) as f64).unwrap();
        let exact = closed_form_solution(&coeffs, TAU, &f.centers()).unwrap();
        errors.push(f.l1_distance(&exact).unwrap());
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let l1_ok = errors[2] <= 1e-3 && orders.iter().all(|&p| p >= 1.0);

    let mut worst: f64 = 0.0;
    let mut moments = Vec::new();
    for (setting, gamma, name) in [
        (Setting::LuriaDelbruck, 2.5, "fp1"),
        (Setting::Simplified, 2.5, "fp2"),
        (Setting::LeaCoulson, 2.8, "fp3"),
    ] {
        let s = experiment(gamma, 1.0);
        let coeffs = build_coefficients(setting, &s).unwrap();
        let f0 = initial_grid(setting, &s, TAU, 4096, Frame::Characteristic).unwrap();
        let (_, rec) = solve_finite_difference_with(&coeffs, &f0, TAU, TAU / 8192.0, Frame::Characteristic).unwrap();
        let em = rel(rec.moments.mean, mean_scaled(&s, TAU).unwrap());
        let ev = rel(rec.moments.variance, variance_scaled(setting, &s, TAU).unwrap());
        worst = worst.max(em).max(ev);
        moments.push(format!("{name} mean {em:.1e} var {ev:.1e}"));
    }
    let pass = l1_ok && worst <= 1e-3;
    report(
        6,
        pass,
        &format!(
            "fp1 L1 {:.2e}/{:.2e}/{:.2e}, orders {:.2}/{:.2}; {}",
            errors[0],
            errors[1],
            errors[2],
            orders[0],
            orders[1],
            moments.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_closed_forms_and_branches() {
    let s = ScaledParams::new(1.0, 3.0, 1.0, 1.0, 1.0, 0.0).unwrap();
    let lc = variance_scaled(Setting::LeaCoulson, &s, 1.0).unwrap();
    let ld = variance_scaled(Setting::LuriaDelbruck, &s, 1.0).unwrap();
    // the finite-epsilon system approaches the limit at rate epsilon
    let tiny = s.with_epsilon(1e-7).unwrap();
    let rk = |setting| {
        let raw = raw_moments(setting, &tiny, 1.0, 4000);
        raw[2] - raw[1] * raw[1]
    };
    let (lc_rk, ld_rk) = (rk(Setting::LeaCoulson), rk(Setting::LuriaDelbruck));
    let values_ok = (lc - 16.709).abs() <= 1e-3
        && (lc - lc_rk).abs() <= 1e-3
        && (ld - 12.696).abs() <= 1e-3
        && (ld - ld_rk).abs() <= 1e-3;

    let mut worst: f64 = 0.0;
    for setting in Setting::ALL {
        for (gamma, gamma1) in [(1.3, 1.3), (0.65, 1.3)] {
            let at = |g1: f64| {
                let p = ScaledParams::new(gamma, g1, 0.8, 1.0, 1.0, 0.0).unwrap();
                (mean_scaled(&p, 2.0).unwrap(), variance_scaled(setting, &p, 2.0).unwrap())
            };
            let (m, v) = at(gamma1);
            for delta in [1e-12, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6] {
                for sign in [-1.0, 1.0] {
                    let (md, vd) = at(gamma1 * (1.0 + sign * delta));
                    worst = worst.max(rel(md, m)).max(rel(vd, v));
                }
            }
        }
    }
    let pass = values_ok && worst <= 1e-5;
    report(
        7,
        pass,
        &format!("LC {lc:.6} (RK4 {lc_rk:.6}), LD {ld:.6} (RK4 {ld_rk:.6}), branch jump {worst:.1e}"),
    );
    assert!(pass);
}

/// Chi-square p-value of Poisson draws with cells pooled to expected count 5.
fn chi_square_p(lambda: f64, xs: &[u64]) -> f64 {
    let n = xs.len() as f64;
    let dist = Poisson::new(lambda).unwrap();
    let top = *xs.iter().max().unwrap() as usize;
    let mut observed = vec![0.0; top + 2];
    for &x in xs {
        observed[x as usize] += 1.0;
    }
    let mut cells = Vec::new();
    let (mut o, mut e, mut cum) = (0.0, 0.0, 0.0);
    for (k, obs) in observed.iter().enumerate().take(top + 1) {
        let p = dist.pmf(k as u64);
        cum += p;
        o += obs;
        e += p * n;
        if e >= 5.0 {
            cells.push((o, e));
            (o, e) = (0.0, 0.0);
        }
    }
    e += (1.0 - cum).max(0.0) * n;
    match cells.last_mut() {
        Some(last) if e < 5.0 => {
            last.0 += o;
            last.1 += e;
        }
        _ => cells.push((o, e)),
    }
    let stat: f64 = cells.iter().map(|(o, e)| (o - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((cells.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn criterion_8_invariants() {
    let mut failures = Vec::new();

    for (i, lambda) in [0.3, 4.0, 10.0, 80.0].into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + i as u64);
        let xs: Vec<u64> = (0..100_000).map(|_| sample_poisson(&mut rng, lambda).unwrap()).collect();
        let p = chi_square_p(lambda, &xs);
        if p < 0.01 {
            failures.push(format!("Poisson({lambda}) chi-square p = {p:.4}"));
        }
    }

    for setting in Setting::ALL {
        let s = experiment(2.5, 0.1);
        let hist = simulate_ensemble(setting, &s, TAU, 2000, 5).unwrap();
        if (hist.total_probability() - 1.0).abs() > 1e-12 {
            failures.push(format!("{setting} histogram mass {}", hist.total_probability()));
        }
        for id in 0..50 {
            let path = simulate_path(setting, &s, TAU, RngStream::new(6, id)).unwrap();
            if !path.windows(2).all(|w| w[1].m >= w[0].m && w[1].t > w[0].t) {
                failures.push(format!("{setting} path {id} is not monotone"));
            }
        }
        let runs: Vec<_> = [1, 2, 8]
            .into_iter()
            .map(|threads| {
                simulate_ensemble_with(setting, &s, TAU, 3000, 11, EnsembleOptions { threads: Some(threads) })
                    .unwrap()
            })
            .collect();
        let bits = |h: &Histogram| (h.bins.clone(), h.mean.to_bits(), h.variance.to_bits());
        if runs.iter().any(|r| bits(r) != bits(&runs[0])) {
            failures.push(format!("{setting} ensemble depends on the worker count"));
        }
    }

    let lab = ScaledParams::new(0.3, 0.5, 4.0, 1.0, 1.0, 0.0).unwrap();
    let cases = [
        (Setting::LuriaDelbruck, experiment(2.5, 1.0), Frame::Characteristic, TAU, TAU / 1024.0),
        (Setting::Simplified, experiment(2.5, 1.0), Frame::Characteristic, TAU, TAU / 1024.0),
        (Setting::LeaCoulson, experiment(2.8, 1.0), Frame::Characteristic, TAU, TAU / 1024.0),
        // the lab frame amplifies smearing of the initial cell by e^{gamma tau}
        (Setting::LuriaDelbruck, lab, Frame::Lab, 1.0, 1e-3),
    ];
    for (setting, s, frame, tau, dt) in cases {
        let coeffs = build_coefficients(setting, &s).unwrap();
        let f0 = initial_grid(setting, &s, tau, 512, frame).unwrap();
        match solve_finite_difference_with(&coeffs, &f0, tau, dt, frame) {
            Ok((_, rec)) if rec.mass_error.abs() <= 1e-8 && rec.min_value >= -1e-12 => {}
            Ok((_, rec)) => failures.push(format!("{setting} {frame:?}: {rec:?}")),
            Err(e) => failures.push(format!("{setting} {frame:?}: {e}")),
        }
    }

    let pass = failures.is_empty();
    let detail = if pass {
        "Poisson chi-square, histogram mass, path monotonicity, determinism over 1/2/8 workers, PDE mass".to_string()
    } else {
        failures.join("; ")
    };
    report(8, pass, &detail);
    assert!(pass);
}
