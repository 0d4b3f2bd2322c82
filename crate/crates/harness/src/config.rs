//! JSON experiment configuration.
//!
//! ```json
//! {
//!   "instance": {
//!     "distribution": { "kind": "gaussian_log_spaced", "d": 20, "lo": 0.001, "hi": 1.0 },
//!     "sigma2": 0.0
//!   },
//!   "solvers": [{ "solver": "asgd" }, { "solver": "sgd" }],
//!   "n_grid": { "min": 100, "max": 100000, "points": 13 },
//!   "tail_fraction": 0.5,
//!   "seeds": 20,
//!   "base_seed": 0,
//!   "start": { "kind": "zero" },
//!   "output": { "csv": "curves.csv", "plot": "plot_curves.py" }
//! }
//! ```
//!
//! `x_star` defaults to the all-ones vector so that the default start
//! `x₀ = 0` carries a bias component.

use std::path::Path;

use asgd::model::{build_instance, derive_asgd_params, DistributionSpec, NoiseModel, ParamConstants};
use asgd::oracle::rng_for;
use asgd::{Instance, Params};
use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionConfig {
    Discrete { probabilities: Vec<f64> },
    UniformDiscrete { d: usize },
    Gaussian { eigenvalues: Vec<f64> },
    /// Eigenvalues log-spaced from `hi` down to `lo`.
    GaussianLogSpaced { d: usize, lo: f64, hi: f64 },
}

impl DistributionConfig {
    pub fn to_spec(&self) -> DistributionSpec<f64> {
        match self {
            Self::Discrete { probabilities } => DistributionSpec::DiscreteOneHot { probabilities: probabilities.clone() },
            Self::UniformDiscrete { d } => DistributionSpec::uniform_discrete(*d),
            Self::Gaussian { eigenvalues } => DistributionSpec::Gaussian { eigenvalues: eigenvalues.clone() },
            Self::GaussianLogSpaced { d, lo, hi } => DistributionSpec::gaussian_log_spaced(*d, *lo, *hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub distribution: DistributionConfig,
    #[serde(default)]
    pub sigma2: f64,
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "solver", rename_all = "snake_case", deny_unknown_fields)]
pub enum SolverConfig {
    /// Default constants unless both `c1` and `c4` are given.
    Asgd {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        c1: Option<f64>,
        #[serde(default)]
        c4: Option<f64>,
    },
    /// Step size defaults to `1/(2R²)`.
    Sgd {
        #[serde(default)]
        label: Option<String>,
        #[serde(default)]
        step_size: Option<f64>,
    },
}

impl SolverConfig {
    pub fn label(&self) -> String {
        match self {
            Self::Asgd { label, .. } => label.clone().unwrap_or_else(|| "asgd".into()),
            Self::Sgd { label, .. } => label.clone().unwrap_or_else(|| "sgd".into()),
        }
    }

    pub fn asgd_params(&self, instance: &Instance) -> Result<Option<Params>, ConfigError> {
        let Self::Asgd { c1, c4, .. } = self else { return Ok(None) };
        let constants = match (c1, c4) {
            (None, None) => None,
            (Some(c1), Some(c4)) => {
                Some(ParamConstants::from_c1_c4(*c1, *c4).map_err(|e| invalid("solvers.c1/c4", e.to_string()))?)
            }
            _ => return Err(invalid("solvers.c1/c4", "give both c1 and c4 or neither")),
        };
        derive_asgd_params(instance, constants).map(Some).map_err(|e| invalid("solvers", e.to_string()))
    }
}

fn default_solvers() -> Vec<SolverConfig> {
    vec![SolverConfig::Asgd { label: None, c1: None, c4: None }, SolverConfig::Sgd { label: None, step_size: None }]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NGrid {
    Values(Vec<usize>),
    Log { min: usize, max: usize, points: usize },
}

impl NGrid {
    /// Grid values; log grids are rounded to integers and deduplicated.
    pub fn values(&self) -> Vec<usize> {
        match self {
            Self::Values(v) => v.clone(),
            Self::Log { min, max, points } => {
                if *points <= 1 || min == max {
                    return vec![*max];
                }
                let (lo, hi) = ((*min as f64).ln(), (*max as f64).ln());
                let mut out: Vec<usize> = (0..*points)
                    .map(|i| (lo + (hi - lo) * i as f64 / (*points - 1) as f64).exp().round() as usize)
                    .collect();
                out.dedup();
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StartConfig {
    #[default]
    Zero,
    Point { x0: Vec<f64> },
    /// `x* + u` with `u` uniform on the unit sphere.
    RandomUnit,
    /// `x* + H^{−1/2} z / ‖z‖`: every eigendirection starts with the same
    /// expected share of the excess risk.
    EqualRisk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_plot")]
    pub plot: String,
}

fn default_csv() -> String {
    "curves.csv".into()
}

fn default_plot() -> String {
    "plot_curves.py".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { csv: default_csv(), plot: default_plot() }
    }
}

fn default_tail_fraction() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub instance: InstanceConfig,
    #[serde(default = "default_solvers")]
    pub solvers: Vec<SolverConfig>,
    pub n_grid: NGrid,
    /// Tail start `t = ⌊fraction · n⌋`.
    #[serde(default = "default_tail_fraction")]
    pub tail_fraction: f64,
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub start: StartConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Random stream reserved for drawing the start point.
const START_STREAM: u64 = u64::MAX;

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let grid = self.n_grid.values();
        if grid.is_empty() {
            return Err(invalid("n_grid", "empty"));
        }
        if grid[0] == 0 {
            return Err(invalid("n_grid", "sample sizes must be positive"));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("n_grid", format!("must be strictly increasing, got {grid:?}")));
        }
        if self.seeds == 0 {
            return Err(invalid("seeds", "must be at least 1"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(invalid("tail_fraction", format!("{} is not in (0, 1)", self.tail_fraction)));
        }
        if self.solvers.is_empty() {
            return Err(invalid("solvers", "empty"));
        }
        let mut labels: Vec<String> = self.solvers.iter().map(SolverConfig::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("solvers", "labels must be unique; set `label` to tell solvers apart"));
        }
        let inst = self.instance()?;
        for s in &self.solvers {
            s.asgd_params(&inst)?;
            if let SolverConfig::Sgd { step_size: Some(eta), .. } = s {
                if !(eta * inst.r2 > 0.0 && eta * inst.r2 < 1.0) {
                    return Err(invalid("solvers.step_size", format!("step_size * R^2 = {} is not in (0, 1)", eta * inst.r2)));
                }
            }
        }
        if let StartConfig::Point { x0 } = &self.start {
            if x0.len() != inst.dim() {
                return Err(invalid("start.x0", format!("length {} but d = {}", x0.len(), inst.dim())));
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<Instance, ConfigError> {
        let spec = self.instance.distribution.to_spec();
        let d = spec.dim();
        let x_star = match &self.instance.x_star {
            Some(v) => DVector::from_vec(v.clone()),
            None => DVector::from_element(d, 1.0),
        };
        let noise = if self.instance.sigma2 == 0.0 {
            NoiseModel::Noiseless
        } else {
            NoiseModel::AdditiveGaussian { sigma2: self.instance.sigma2 }
        };
        build_instance(spec, noise, x_star).map_err(|e| invalid("instance", e.to_string()))
    }

    /// `(n, t)` pairs of the grid.
    pub fn windows(&self) -> Vec<(usize, usize)> {
        self.n_grid.values().into_iter().map(|n| (n, tail_start(n, self.tail_fraction))).collect()
    }

    pub fn start_point(&self, instance: &Instance) -> DVector<f64> {
        start_point(&self.start, instance, self.base_seed)
    }
}

pub fn tail_start(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).floor() as usize).min(n.saturating_sub(1))
}

pub fn start_point(start: &StartConfig, instance: &Instance, seed: u64) -> DVector<f64> {
    let d = instance.dim();
    let mut rng = rng_for(seed, START_STREAM);
    let mut gaussian = || DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    match start {
        StartConfig::Zero => DVector::zeros(d),
        StartConfig::Point { x0 } => DVector::from_vec(x0.clone()),
        StartConfig::RandomUnit => {
            let z: DVector<f64> = gaussian();
            &instance.x_star + &z / z.norm()
        }
        StartConfig::EqualRisk => {
            let z: DVector<f64> = gaussian();
            let scaled = z.component_div(&instance.h_diag.map(f64::sqrt));
            &instance.x_star + scaled / z.norm()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "instance": { "distribution": { "kind": "uniform_discrete", "d": 2 }, "sigma2": 1.0 },
        "n_grid": [10, 100],
        "seeds": 3
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.tail_fraction, 0.5);
        assert_eq!(cfg.solvers.len(), 2);
        assert_eq!(cfg.start, StartConfig::Zero);
        assert_eq!(cfg.windows(), vec![(10, 5), (100, 50)]);
        assert_eq!(cfg.instance().unwrap().x_star, DVector::from_element(2, 1.0));
    }

    #[test]
    fn log_grid_is_increasing() {
        let g = NGrid::Log { min: 10, max: 100_000, points: 9 }.values();
        assert_eq!(g.first(), Some(&10));
        assert_eq!(g.last(), Some(&100_000));
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn diagnostics_name_the_field() {
        let bad = MINIMAL.replace("[10, 100]", "[100, 10]");
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("n_grid"), "{err}");
        let bad = MINIMAL.replace("\"seeds\": 3", "\"seeds\": 0");
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().to_string().contains("seeds"));
        let bad = MINIMAL.replace("\"seeds\": 3", "\"seeds\": 3, \"tail_fraction\": 1.0");
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().to_string().contains("tail_fraction"));
        let bad = MINIMAL.replace("\"d\": 2", "\"d\": 2, \"extra\": 1");
        assert!(matches!(ExperimentConfig::from_json(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn equal_risk_start_has_unit_weighted_norm() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        let inst = cfg.instance().unwrap();
        let x0 = start_point(&StartConfig::EqualRisk, &inst, 4);
        let risk = asgd::oracle::excess_risk(&inst, &x0);
        assert!((risk - 0.5).abs() < 1e-12);
    }
}
