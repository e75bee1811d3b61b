//! Subcommand implementations. Each one resolves its configuration, runs the
//! computation, and only then creates the output directory and writes
//! artifacts, so a failed run leaves nothing behind.

use std::fs;
use std::path::Path;

use clap::Args;
use luria_core::convergence::{Reference, ORACLE_SAMPLES, REFERENCE_QUAD_TOL, REFERENCE_RESIDUAL};
use luria_core::io::{ensure_dir, write_artifact, CsvTable};
use luria_core::moments::moment_curve_limit;
use luria_core::refdist::clone_oracle;
use luria_core::*;
use serde::Serialize;

use crate::config::{CommonArgs, FileConfig, RunConfig};
use crate::plot::{gnuplot_script, Series};
use crate::CliError;

/// Envelope of every JSON run record.
#[derive(Serialize)]
struct Record<'a, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    artifacts: Vec<String>,
    result: R,
}

/// Sidecar of a secondary CSV table.
#[derive(Serialize)]
struct Sidecar<'a, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    record: String,
    table: R,
    config: &'a RunConfig,
}

const TOOL: &str = "luria";
const VERSION: &str = env!("CARGO_PKG_VERSION");

fn write_record<R: Serialize>(
    config: &RunConfig,
    command: &'static str,
    table: &dyn CsvTable,
    mut artifacts: Vec<String>,
    result: R,
) -> Result<(), CliError> {
    artifacts.insert(0, format!("{command}.csv"));
    let record = Record {
        tool: TOOL,
        version: VERSION,
        command,
        config,
        artifacts,
        result,
    };
    let (csv, json) = write_artifact(&config.out, command, table, &record)?;
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn write_secondary<R: Serialize>(
    config: &RunConfig,
    command: &'static str,
    stem: &str,
    table: &dyn CsvTable,
    meta: R,
) -> Result<String, CliError> {
    let sidecar = Sidecar {
        tool: TOOL,
        version: VERSION,
        command,
        record: format!("{command}.json"),
        table: meta,
        config,
    };
    write_artifact(&config.out, stem, table, &sidecar)?;
    Ok(format!("{stem}.csv"))
}

fn write_plot(dir: &Path, stem: &str, script: String) -> Result<String, CliError> {
    let name = format!("{stem}.gp");
    fs::write(dir.join(&name), script).map_err(luria_core::Error::from)?;
    Ok(name)
}

fn options(threads: Option<usize>) -> EnsembleOptions {
    EnsembleOptions { threads }
}

fn positive(field: &str, value: usize) -> Result<usize, CliError> {
    if value == 0 {
        Err(CliError::validation(field, "must be at least 1"))
    } else {
        Ok(value)
    }
}

// ---------------------------------------------------------------- moments

#[derive(Debug, Args)]
pub struct MomentsArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Number of equally spaced times on [0, tau].
    #[arg(long)]
    points: Option<usize>,
}

#[derive(Serialize)]
struct MomentsResult {
    mean: f64,
    variance: f64,
    exact_mean: f64,
    exact_variance: f64,
}

pub fn moments(args: MomentsArgs) -> Result<(), CliError> {
    let flags = FileConfig {
        points: args.points,
        ..Default::default()
    };
    let config = RunConfig::resolve(&args.common, flags, None)?;
    let scaled = config.scaled()?;
    let tau = config.tau()?;
    let points = positive("points", config.options.points.unwrap_or(101))?;
    let grid: Vec<f64> = if tau == 0.0 || points == 1 {
        vec![0.0]
    } else {
        (0..points).map(|i| tau * i as f64 / (points - 1) as f64).collect()
    };
    let limit = moment_curve_limit(config.setting, &scaled, &grid)?;
    let exact = variance_ode_scaled(config.setting, &scaled, &grid)?;
    let (mean, variance) = limit.last().expect("nonempty grid");
    let (exact_mean, exact_variance) = exact.last().expect("nonempty grid");

    ensure_dir(&config.out)?;
    let exact_csv = write_secondary(&config, "moments", "moments_exact", &exact, "finite-epsilon moments")?;
    let plot = write_plot(
        &config.out,
        "moments",
        gnuplot_script(
            "moments",
            "tau",
            "variance",
            false,
            &[
                Series::new("moments.csv", 1, 3, "limit"),
                Series::new("moments_exact.csv", 1, 3, format!("epsilon = {}", config.eps)),
            ],
        ),
    )?;
    write_record(
        &config,
        "moments",
        &limit,
        vec![exact_csv, plot],
        MomentsResult {
            mean,
            variance,
            exact_mean,
            exact_variance,
        },
    )
}

// --------------------------------------------------------------- simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Serialize)]
struct HistogramResult {
    n_samples: u64,
    mean: f64,
    variance: f64,
    max_bin: u64,
}

impl From<&Histogram> for HistogramResult {
    fn from(h: &Histogram) -> Self {
        HistogramResult {
            n_samples: h.n_samples,
            mean: h.mean,
            variance: h.variance,
            max_bin: h.max_bin(),
        }
    }
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let flags = FileConfig {
        samples: args.samples,
        ..Default::default()
    };
    let config = RunConfig::resolve(&args.common, flags, None)?;
    let scaled = config.scaled()?;
    let samples = positive("samples", config.options.samples.unwrap_or(10_000))?;
    let hist = simulate_ensemble_with(
        config.setting,
        &scaled,
        config.tau()?,
        samples,
        config.seed,
        options(config.threads),
    )?;

    ensure_dir(&config.out)?;
    let plot = write_plot(
        &config.out,
        "simulate",
        gnuplot_script(
            "simulate",
            "mutants",
            "probability",
            false,
            &[Series::new("simulate.csv", 1, 2, "ensemble").with_style("impulses")],
        ),
    )?;
    write_record(&config, "simulate", &hist, vec![plot], HistogramResult::from(&hist))
}

// ---------------------------------------------------------------- refdist

#[derive(Debug, Args)]
pub struct RefdistArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// cf, oracle or recursion (default: cf, or oracle for lc)
    #[arg(long)]
    method: Option<String>,
    /// Largest count kept; by default the CF inversion grows until the
    /// residual mass is below 1e-4.
    #[arg(long)]
    kmax: Option<usize>,
    /// Oracle draws.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Serialize)]
struct PmfResult {
    method: String,
    k_max: usize,
    residual: f64,
    truncated_mean: f64,
    warnings: Vec<String>,
}

impl From<&Pmf> for PmfResult {
    fn from(p: &Pmf) -> Self {
        PmfResult {
            method: p.method.clone(),
            k_max: p.k_max(),
            residual: p.residual,
            truncated_mean: p.truncated_mean(),
            warnings: p.warnings.clone(),
        }
    }
}

fn characteristic_function(setting: Setting, scaled: &Scaled, tau: f64) -> Result<Cf, CliError> {
    match setting {
        Setting::LuriaDelbruck => Ok(ld_characteristic_function(scaled, tau, REFERENCE_QUAD_TOL)?),
        Setting::Simplified => Ok(simplified_characteristic_function(scaled, tau)?),
        Setting::LeaCoulson => Err(CliError::validation(
            "method",
            "no characteristic function for lc; use --method oracle or recursion",
        )),
    }
}

pub fn refdist(args: RefdistArgs) -> Result<(), CliError> {
    let flags = FileConfig {
        method: args.method,
        kmax: args.kmax,
        samples: args.samples,
        ..Default::default()
    };
    let config = RunConfig::resolve(&args.common, flags, None)?;
    let scaled = config.scaled()?;
    let tau = config.tau()?;
    let default_method = match config.setting {
        Setting::LeaCoulson => "oracle",
        _ => "cf",
    };
    let method = config.options.method.clone().unwrap_or_else(|| default_method.into());
    let kmax = config.options.kmax;
    if kmax == Some(0) {
        return Err(CliError::validation("kmax", "must be at least 1"));
    }

    let plot_series = |title: &str| {
        gnuplot_script(
            "refdist",
            "mutants",
            "probability",
            true,
            &[Series::new("refdist.csv", 1, 2, title).with_style("impulses")],
        )
    };
    match method.as_str() {
        "cf" => {
            let cf = characteristic_function(config.setting, &scaled, tau)?;
            let pmf = match kmax {
                Some(k) => pmf_from_cf(&cf, k, (4 * k).next_power_of_two())?,
                None => pmf_from_cf_auto(&cf, REFERENCE_RESIDUAL)?,
            };
            ensure_dir(&config.out)?;
            let plot = write_plot(&config.out, "refdist", plot_series("cf inversion"))?;
            write_record(&config, "refdist", &pmf, vec![plot], PmfResult::from(&pmf))
        }
        "recursion" => {
            if config.setting != Setting::LeaCoulson {
                return Err(CliError::validation("method", "recursion is the lc law; use --setting lc"));
            }
            if config.gamma != config.gamma1 {
                return Err(CliError::validation("gamma", "recursion requires gamma = gamma1"));
            }
            if config.m0 != 0.0 {
                return Err(CliError::validation("m0", "recursion requires m0 = 0"));
            }
            // expected number of mutation events on [0, tau]
            let g1 = config.gamma1;
            let arrivals = if g1 == 0.0 { tau } else { (g1 * tau).exp_m1() / g1 };
            let theta = config.nu * config.n0 * arrivals;
            let pmf = lc_pmf_recursion(theta, kmax.unwrap_or(4096))?;
            ensure_dir(&config.out)?;
            let plot = write_plot(&config.out, "refdist", plot_series("recursion"))?;
            #[derive(Serialize)]
            struct WithTheta {
                theta: f64,
                #[serde(flatten)]
                pmf: PmfResult,
            }
            write_record(
                &config,
                "refdist",
                &pmf,
                vec![plot],
                WithTheta {
                    theta,
                    pmf: PmfResult::from(&pmf),
                },
            )
        }
        "oracle" => {
            let samples = positive("samples", config.options.samples.unwrap_or(ORACLE_SAMPLES))?;
            let hist = clone_oracle(config.setting, &scaled, tau, samples, config.seed)?;
            ensure_dir(&config.out)?;
            let plot = write_plot(&config.out, "refdist", plot_series("clone sampler"))?;
            write_record(&config, "refdist", &hist, vec![plot], HistogramResult::from(&hist))
        }
        other => Err(CliError::validation(
            "method",
            format!("unknown method `{other}`; expected cf, oracle or recursion"),
        )),
    }
}

// -------------------------------------------------------------------- pde

#[derive(Debug, Args)]
pub struct PdeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// fp1 (ld), fp2 (simplified) or fp3 (lc); defaults to the setting's.
    #[arg(long)]
    approx: Option<String>,
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// characteristic or lab
    #[arg(long)]
    frame: Option<String>,
}

fn approx_setting(name: &str) -> Result<Setting, CliError> {
    match name {
        "fp1" => Ok(Setting::LuriaDelbruck),
        "fp2" => Ok(Setting::Simplified),
        "fp3" => Ok(Setting::LeaCoulson),
        other => Err(CliError::validation(
            "approx",
            format!("unknown approximation `{other}`; expected fp1, fp2 or fp3"),
        )),
    }
}

fn approx_name(setting: Setting) -> &'static str {
    match setting {
        Setting::LuriaDelbruck => "fp1",
        Setting::Simplified => "fp2",
        Setting::LeaCoulson => "fp3",
    }
}

/// Step meeting the lab-frame Courant limit with a margin.
fn lab_step(coeffs: &Coefficients, grid: &Grid, tau: f64) -> f64 {
    let reach = grid.m_min.abs().max(grid.m_max.abs());
    let speed = (0..=64)
        .map(|i| tau * i as f64 / 64.0)
        .map(|t| ((coeffs.a)(t) * reach).abs() + (coeffs.b)(t).abs())
        .fold(0.0, f64::max);
    let cell = (0..grid.n_cells).map(|j| grid.cell_width(j)).fold(f64::INFINITY, f64::min);
    if speed > 0.0 {
        (0.9 * diffusion::LAB_CFL * cell / speed).min(tau.max(f64::MIN_POSITIVE))
    } else {
        tau.max(f64::MIN_POSITIVE)
    }
}

#[derive(Serialize)]
struct PdeResult {
    approx: &'static str,
    #[serde(flatten)]
    run: RunRecord,
    target: GridMoments,
    #[serde(skip_serializing_if = "Option::is_none")]
    closed_form_l1: Option<f64>,
}

pub fn pde(args: PdeArgs) -> Result<(), CliError> {
    let approx = args.approx.as_deref().map(approx_setting).transpose()?;
    let flags = FileConfig {
        approx: args.approx.clone(),
        cells: args.cells,
        dt: args.dt,
        frame: args.frame.clone(),
        ..Default::default()
    };
    let config = RunConfig::resolve(&args.common, flags, approx)?;
    let setting = match config.options.approx.as_deref().map(approx_setting).transpose()? {
        Some(s) if s != config.setting && args.common.setting.is_some() => {
            return Err(CliError::validation(
                "approx",
                format!("{} does not belong to setting {}", approx_name(s), config.setting),
            ))
        }
        Some(s) => s,
        None => config.setting,
    };
    let scaled = config.scaled()?;
    let tau = config.tau()?;
    let cells = config.options.cells.unwrap_or(1024);
    if cells < 2 {
        return Err(CliError::validation("cells", "need at least 2 cells"));
    }
    let frame: Frame = match config.options.frame.as_deref() {
        Some(f) => f.parse()?,
        None => Frame::Characteristic,
    };
    let coeffs = build_coefficients(setting, &scaled)?;
    let f0 = initial_grid(setting, &scaled, tau, cells, frame)?;
    let dt = match config.options.dt {
        Some(dt) => dt,
        None if frame == Frame::Lab => lab_step(&coeffs, &f0, tau),
        None => (tau / (2 * cells) as f64).max(f64::MIN_POSITIVE),
    };
    let (f, run) = solve_finite_difference_with(&coeffs, &f0, tau, dt, frame)?;
    let target = GridMoments {
        mean: mean_scaled(&scaled, tau)?,
        variance: variance_scaled(setting, &scaled, tau)?,
    };
    let closed_form_l1 = if setting != Setting::LeaCoulson && f.is_uniform() && tau > 0.0 {
        let exact = closed_form_solution(&coeffs, tau, &f.centers())?;
        Some(f.l1_distance(&exact)?)
    } else {
        None
    };

    ensure_dir(&config.out)?;
    let plot = write_plot(
        &config.out,
        "pde",
        gnuplot_script("pde", "m", "density", false, &[Series::new("pde.csv", 1, 2, approx_name(setting))]),
    )?;
    write_record(
        &config,
        "pde",
        &f,
        vec![plot],
        PdeResult {
            approx: approx_name(setting),
            run,
            target,
            closed_form_l1,
        },
    )
}

// --------------------------------------------------------------- converge

#[derive(Debug, Args)]
pub struct ConvergeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated epsilons, e.g. 0.1,0.01
    #[arg(long, value_delimiter = ',')]
    eps_list: Option<Vec<f64>>,
    #[arg(long)]
    samples: Option<usize>,
    /// Clone-sampler draws for the lc reference.
    #[arg(long)]
    oracle_samples: Option<usize>,
}

/// Rows of `epsilon,tv,mean_error,variance_error`.
struct Summary<'a>(&'a [EpsilonResult]);

impl CsvTable for Summary<'_> {
    fn header(&self) -> &'static str {
        "epsilon,tv,mean_error,variance_error"
    }

    fn write_rows(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        for r in self.0 {
            writeln!(out, "{},{},{},{}", r.epsilon, r.tv, r.mean_error, r.variance_error)?;
        }
        Ok(())
    }
}

pub fn converge(args: ConvergeArgs) -> Result<(), CliError> {
    let flags = FileConfig {
        eps_list: args.eps_list,
        samples: args.samples,
        oracle_samples: args.oracle_samples,
        ..Default::default()
    };
    let config = RunConfig::resolve(&args.common, flags, None)?;
    let eps_list = config.options.eps_list.clone().unwrap_or_else(|| vec![0.1, 0.01]);
    let mut cc = ConvergenceConfig::new(
        config.setting,
        config.scaled()?,
        config.tau()?,
        positive("samples", config.options.samples.unwrap_or(100_000))?,
        config.seed,
    );
    cc.oracle_samples = positive("oracle_samples", config.options.oracle_samples.unwrap_or(ORACLE_SAMPLES))?;
    cc.threads = config.threads;
    let run = run_convergence(&cc, &eps_list)?;
    for v in &run.report.violations {
        eprintln!("warning: {v}");
    }

    ensure_dir(&config.out)?;
    let mut artifacts = Vec::new();
    let mut series = Vec::new();
    let reference_table: &dyn CsvTable = match &run.reference {
        Reference::Pmf(pmf) => pmf,
        Reference::Oracle(hist) => hist,
    };
    artifacts.push(write_secondary(
        &config,
        "converge",
        "reference",
        reference_table,
        run.reference.method(),
    )?);
    series.push(Series::new("reference.csv", 1, 2, "reference"));
    for ((eps, hist), result) in run.histograms.iter().zip(&run.report.results) {
        let stem = format!("ensemble_eps_{eps}");
        artifacts.push(write_secondary(&config, "converge", &stem, hist, result)?);
        series.push(Series::new(format!("{stem}.csv"), 1, 2, format!("epsilon = {eps}")).with_style("steps"));
    }
    artifacts.push(write_plot(
        &config.out,
        "converge",
        gnuplot_script("converge", "mutants", "probability", true, &series),
    )?);
    write_record(&config, "converge", &Summary(&run.report.results), artifacts, &run.report)
}
