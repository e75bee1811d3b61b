//! Run configuration: JSON file fields overridden by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use luria_core::{Scaled, ScaledParams, Setting};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// ld, lc or simplified
    #[arg(long)]
    pub setting: Option<Setting>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gamma1: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub n0: Option<f64>,
    #[arg(long)]
    pub m0: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory, created if needed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON file with any of the run configuration fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Worker threads for ensembles (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Per-subcommand options, all optional so that a config file can supply them.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<Setting>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub approx: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_list: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_samples: Option<usize>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::validation("config", format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::validation("config", format!("{}: {e}", path.display())))
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(self, over: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            setting, gamma, gamma1, nu, eps, n0, m0, tau, seed, out, threads, samples, method, kmax, approx,
            cells, dt, frame, points, eps_list, oracle_samples
        )
    }

    pub fn from_common(c: &CommonArgs) -> FileConfig {
        FileConfig {
            setting: c.setting,
            gamma: c.gamma,
            gamma1: c.gamma1,
            nu: c.nu,
            eps: c.eps,
            n0: c.n0,
            m0: c.m0,
            tau: c.tau,
            seed: c.seed,
            out: c.out.clone(),
            threads: c.threads,
            ..FileConfig::default()
        }
    }
}

/// Fully resolved configuration, echoed into every run record.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub setting: Setting,
    pub gamma: f64,
    pub gamma1: f64,
    pub nu: f64,
    pub eps: f64,
    pub n0: f64,
    pub m0: f64,
    pub tau: f64,
    pub seed: u64,
    pub out: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(flatten)]
    pub options: FileConfig,
}

/// Defaults reproduce the Luria-Delbrück experiment at the finer scale.
pub const DEFAULT_GAMMA: f64 = 2.5;
pub const DEFAULT_GAMMA1: f64 = 3.0;
pub const DEFAULT_NU: f64 = 1e-7;
pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_TAU: f64 = 6.7;
pub const DEFAULT_OUT: &str = "luria-out";

impl RunConfig {
    /// Merges the config file (if any) under `flags`. `setting` must come
    /// from one of them unless `fallback` supplies it.
    pub fn resolve(common: &CommonArgs, flags: FileConfig, fallback: Option<Setting>) -> Result<Self, CliError> {
        let file = match &common.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let merged = file.overlay(FileConfig::from_common(common)).overlay(flags);
        let setting = merged
            .setting
            .or(fallback)
            .ok_or_else(|| CliError::validation("setting", "required: --setting {ld|lc|simplified}"))?;
        let mut options = merged.clone();
        // the resolved scalars below are reported once, not twice
        for slot in [
            &mut options.gamma,
            &mut options.gamma1,
            &mut options.nu,
            &mut options.eps,
            &mut options.n0,
            &mut options.m0,
            &mut options.tau,
        ] {
            *slot = None;
        }
        options.setting = None;
        options.seed = None;
        options.out = None;
        options.threads = None;
        Ok(RunConfig {
            setting,
            gamma: merged.gamma.unwrap_or(DEFAULT_GAMMA),
            gamma1: merged.gamma1.unwrap_or(DEFAULT_GAMMA1),
            nu: merged.nu.unwrap_or(DEFAULT_NU),
            eps: merged.eps.unwrap_or(DEFAULT_EPS),
            n0: merged.n0.unwrap_or(1.0),
            m0: merged.m0.unwrap_or(0.0),
            tau: merged.tau.unwrap_or(DEFAULT_TAU),
            seed: merged.seed.unwrap_or(0),
            out: merged.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            threads: merged.threads,
            options,
        })
    }

    pub fn scaled(&self) -> Result<Scaled, CliError> {
        Ok(ScaledParams::new(self.gamma, self.gamma1, self.nu, self.eps, self.n0, self.m0)?)
    }

    pub fn tau(&self) -> Result<f64, CliError> {
        if self.tau >= 0.0 && self.tau.is_finite() {
            Ok(self.tau)
        } else {
            Err(CliError::validation("tau", format!("{} violates tau >= 0", self.tau)))
        }
    }
}
