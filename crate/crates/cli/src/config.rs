//! Per-subcommand configuration files: flat TOML tables, unknown keys rejected.
//! Physics parameters have no defaults; numerical knobs do.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use shf_core::fk::{FkConfig, Monitoring, NoiseMode, PathEnsemble, RegionSpec, Sampling};
use shf_core::moments::{ProfileSpec, Reduction};
use shf_core::plane::Point;
use shf_core::tubes::TubeFamily;

use crate::error::{CliError, CliResult};

pub trait RunConfig: DeserializeOwned + Serialize {
    fn seed_slot(&mut self) -> &mut Option<u64>;
}

macro_rules! run_config {
    ($($t:ty),*) => {
        $(impl RunConfig for $t {
            fn seed_slot(&mut self) -> &mut Option<u64> {
                &mut self.seed
            }
        })*
    };
}

run_config!(
    DickmanConfig,
    GreenConfig,
    MomentsConfig,
    ScanConfig,
    SimulateConfig,
    TubesConfig,
    CertificateConfig,
    TailConfig,
    IndependenceConfig
);

/// Parses `path` and resolves the master seed (`--seed` wins over the file).
pub fn load<T: RunConfig>(path: &Path, seed: Option<u64>) -> CliResult<(T, u64)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg: T = toml::from_str(&text).map_err(|e| CliError::schema(format!("{}: {}", path.display(), e.message())))?;
    let seed = seed.or(*cfg.seed_slot()).ok_or_else(CliError::missing_seed)?;
    *cfg.seed_slot() = Some(seed);
    Ok((cfg, seed))
}

fn default_resolution() -> usize {
    1000
}

fn default_cap() -> f64 {
    1e4
}

fn default_samples() -> usize {
    200
}

fn default_s_step() -> f64 {
    0.025
}

fn default_s_max() -> f64 {
    20.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DickmanConfig {
    pub seed: Option<u64>,
    /// Increasing subordinator times.
    pub s: Vec<f64>,
    pub t_max: f64,
    pub t_step: f64,
    pub panel_width: Option<f64>,
    pub abs_tol: Option<f64>,
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenConfig {
    pub seed: Option<u64>,
    pub theta: Vec<f64>,
    pub t: Vec<f64>,
    /// Dickman `s` grid used for `t > 1`.
    #[serde(default = "default_s_step")]
    pub s_step: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentsConfig {
    pub seed: Option<u64>,
    pub theta: f64,
    pub t: f64,
    pub u0: ProfileSpec,
    pub phi: ProfileSpec,
    pub reduction: Reduction,
    #[serde(default = "default_s_step")]
    pub s_step: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub seed: Option<u64>,
    pub theta: f64,
    pub t: f64,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_factor")]
    pub factor: f64,
}

fn default_factor() -> f64 {
    shf_core::moments::DEFAULT_SCAN_FACTOR
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: Option<u64>,
    pub theta: f64,
    pub epsilon: f64,
    pub t: f64,
    #[serde(default)]
    pub rho_offset: f64,
    pub h: Option<f64>,
    #[serde(default)]
    pub coupling_off: bool,
    #[serde(default)]
    pub mode: NoiseMode,
    pub region: RegionSpec,
    pub paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub monitoring: Monitoring,
    /// Quenched noise seed; derived from the master seed when absent.
    pub noise_seed: Option<u64>,
}

impl SimulateConfig {
    pub fn fk(&self) -> FkConfig {
        FkConfig {
            theta: self.theta,
            epsilon: self.epsilon,
            t: self.t,
            rho_offset: self.rho_offset,
            h: self.h,
            coupling_off: self.coupling_off,
            mode: self.mode,
        }
    }

    pub fn ensemble(&self, seed: u64) -> PathEnsemble {
        PathEnsemble {
            paths: self.paths,
            dt: self.dt,
            seed,
            sampling: self.sampling,
            monitoring: self.monitoring,
        }
    }
}

/// Tube family block shared by `tubes`, `certificate` and `independence`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubesConfig {
    pub seed: Option<u64>,
    #[serde(rename = "N")]
    pub n_big: usize,
    pub alpha: f64,
    pub r: f64,
    pub t: f64,
    #[serde(default)]
    pub a: Point,
    /// Drift constant; the smallest certified one is searched when absent.
    pub c_drift: Option<f64>,
    #[serde(default)]
    pub margin_target: f64,
    #[serde(default = "default_resolution")]
    pub s_resolution: usize,
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Time samples per tube in the plotted envelopes and margin profiles.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    pub seed: Option<u64>,
    #[serde(rename = "N")]
    pub n_big: usize,
    pub alpha: f64,
    pub r: f64,
    pub t: f64,
    #[serde(default)]
    pub a: Point,
    pub theta: f64,
    pub c_drift: Option<f64>,
    #[serde(default)]
    pub margin_target: f64,
    #[serde(default = "default_resolution")]
    pub s_resolution: usize,
    #[serde(default = "default_cap")]
    pub cap: f64,
    pub paths: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub seed: Option<u64>,
    pub theta: f64,
    pub epsilon: f64,
    pub t: f64,
    #[serde(default)]
    pub rho_offset: f64,
    pub h: Option<f64>,
    pub region: RegionSpec,
    /// Thresholds `x` of `P(log Z ≤ −x)`.
    pub thresholds: Vec<f64>,
    pub realizations: usize,
    pub paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub monitoring: Monitoring,
}

impl TailConfig {
    pub fn fk(&self) -> FkConfig {
        FkConfig {
            rho_offset: self.rho_offset,
            h: self.h,
            ..FkConfig::new(self.theta, self.epsilon, self.t)
        }
    }

    pub fn ensemble(&self, seed: u64) -> PathEnsemble {
        PathEnsemble {
            paths: self.paths,
            dt: self.dt,
            seed,
            sampling: self.sampling,
            monitoring: self.monitoring,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndependenceConfig {
    pub seed: Option<u64>,
    pub theta: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rho_offset: f64,
    pub h: Option<f64>,
    #[serde(rename = "N")]
    pub n_big: usize,
    pub alpha: f64,
    pub r: f64,
    pub t: f64,
    #[serde(default)]
    pub a: Point,
    pub c_drift: Option<f64>,
    #[serde(default = "default_resolution")]
    pub s_resolution: usize,
    #[serde(default = "default_cap")]
    pub cap: f64,
    /// Tube labels `[n, j]`.
    pub tubes: Vec<[usize; 2]>,
    pub realizations: usize,
    pub paths: usize,
    pub dt: f64,
    #[serde(default)]
    pub sampling: Sampling,
}

impl IndependenceConfig {
    pub fn fk(&self) -> FkConfig {
        FkConfig {
            rho_offset: self.rho_offset,
            h: self.h,
            ..FkConfig::new(self.theta, self.epsilon, self.t)
        }
    }
}

/// Family with the configured drift constant, or the smallest certified one.
pub fn resolve_family(n_big: usize, alpha: f64, r: f64, t: f64, a: Point, c_drift: Option<f64>, target: f64, res: usize, cap: f64) -> CliResult<(TubeFamily, bool)> {
    let (c, searched) = match c_drift {
        Some(c) => (c, false),
        None => (shf_core::tubes::min_drift_constant(n_big, alpha, r, t, a, target, res, cap)?, true),
    };
    Ok((TubeFamily::new(n_big, alpha, r, t, a, c)?, searched))
}
