//! Experiment configuration: JSON on disk, resolved into core types.

use std::path::{Path, PathBuf};

use prior_transport::gauss_bridge::{GaussianSpec, GaussianState};
use prior_transport::io::parse_density_csv;
use prior_transport::linsys::{LinearSystem, SystemSpec, DEFAULT_STEPS};
use prior_transport::omt::{builtin_density, GridDensity};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    pub marginals: MarginalSpec,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default)]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Output times for interpolation flows.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn default_grid() -> usize {
    256
}

fn default_seed() -> u64 {
    42
}

fn default_tol() -> f64 {
    prior_transport::sinkhorn::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    prior_transport::sinkhorn::DEFAULT_MAX_ITER
}

fn default_times() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "mode", deny_unknown_fields)]
pub enum MarginalSpec {
    #[serde(rename = "gaussian")]
    Gaussian {
        initial: GaussianSpec,
        #[serde(rename = "final")]
        terminal: GaussianSpec,
    },
    #[serde(rename = "grid1d")]
    Grid1d {
        initial: DensitySource,
        #[serde(rename = "final")]
        terminal: DensitySource,
    },
}

/// `{"builtin": "paper62_rho0"}` or `{"csv": "rho0.csv"}` (columns x, rho).
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySource {
    Builtin(String),
    Csv(PathBuf),
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub epsilon: Vec<f64>,
    pub steps: Option<usize>,
    pub grid: Option<usize>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone)]
pub enum Marginals {
    Gaussian(GaussianState, GaussianState),
    Grid(GridDensity, GridDensity),
}

/// A validated experiment ready to run.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub system: LinearSystem,
    pub marginals: Marginals,
    pub epsilon: Vec<f64>,
    pub steps: usize,
    pub grid: usize,
    pub paths: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iter: usize,
    pub times: Vec<f64>,
    pub out: PathBuf,
}

impl Experiment {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::resolve(config, base, overrides)
    }

    pub fn resolve(mut config: ExperimentConfig, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        if !overrides.epsilon.is_empty() {
            config.epsilon = overrides.epsilon.clone();
        }
        config.steps = overrides.steps.unwrap_or(config.steps);
        config.grid = overrides.grid.unwrap_or(config.grid);
        config.paths = overrides.paths.unwrap_or(config.paths);
        config.seed = overrides.seed.unwrap_or(config.seed);
        config.tol = overrides.tol.unwrap_or(config.tol);
        let out = match &overrides.out {
            Some(o) => o.clone(),
            None => base.join(&config.out),
        };

        if let Some(e) = config.epsilon.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(CliError::Config(format!("epsilon values must be finite and nonnegative, got {e}")));
        }
        if config.steps < 4 {
            return Err(CliError::Config(format!("steps must be at least 4, got {}", config.steps)));
        }
        if config.grid < 2 {
            return Err(CliError::Config(format!("grid must have at least 2 points, got {}", config.grid)));
        }
        if !(config.tol > 0.0) {
            return Err(CliError::Config(format!("tol must be positive, got {}", config.tol)));
        }
        if config.times.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(CliError::Config("times must lie in [0, 1]".into()));
        }

        let system = config.system.build().map_err(CliError::from_validation)?;
        let marginals = match &config.marginals {
            MarginalSpec::Gaussian { initial, terminal } => Marginals::Gaussian(
                GaussianState::from_spec(initial).map_err(CliError::from_validation)?,
                GaussianState::from_spec(terminal).map_err(CliError::from_validation)?,
            ),
            MarginalSpec::Grid1d { initial, terminal } => {
                Marginals::Grid(load_density(initial, base, config.grid)?, load_density(terminal, base, config.grid)?)
            }
        };
        Ok(Self {
            system,
            marginals,
            epsilon: config.epsilon,
            steps: config.steps,
            grid: config.grid,
            paths: config.paths,
            seed: config.seed,
            tol: config.tol,
            max_iter: config.max_iter,
            times: config.times,
            out,
        })
    }

    pub fn gaussian(&self) -> Result<(&GaussianState, &GaussianState), CliError> {
        match &self.marginals {
            Marginals::Gaussian(a, b) => Ok((a, b)),
            Marginals::Grid(..) => Err(CliError::Config("this command needs marginals in gaussian mode".into())),
        }
    }

    pub fn densities(&self) -> Result<(&GridDensity, &GridDensity), CliError> {
        match &self.marginals {
            Marginals::Grid(a, b) => Ok((a, b)),
            Marginals::Gaussian(..) => Err(CliError::Config("this command needs marginals in grid1d mode".into())),
        }
    }

    pub fn epsilons(&self) -> Result<&[f64], CliError> {
        if self.epsilon.is_empty() {
            return Err(CliError::Config("epsilon list is empty".into()));
        }
        Ok(&self.epsilon)
    }
}

fn load_density(src: &DensitySource, base: &Path, grid: usize) -> Result<GridDensity, CliError> {
    let density = match src {
        DensitySource::Builtin(name) => builtin_density(name, grid).map_err(CliError::from_validation)?,
        DensitySource::Csv(file) => {
            let path = base.join(file);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Config(format!("cannot read density {}: {e}", path.display())))?;
            parse_density_csv(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
    };
    density.normalized().map_err(CliError::from_validation)
}
