//! Run configuration file (TOML).
//!
//! ```toml
//! [problem]
//! a = -10.0
//! b = 10.0
//! horizon = 1.0
//! sigma_low = 0.5
//! sigma_high = 1.0
//! mode = "sublinear"          # or "superlinear"
//! boundary_left = 1.0
//! boundary_right = 0.0
//! initial = { kind = "indicator_leq", threshold = 0.0 }
//! # initial = { kind = "smoothed_indicator", n = 8 }
//! # initial = { kind = "tabulated", values = [ ... ] }   # intervals + 1 values
//!
//! [numerics]
//! intervals = 400
//! steps = 100
//! epsilon = 1e-8              # optional
//! max_newton = 50             # optional
//!
//! [output]                    # optional
//! csv = "profile.csv"         # relative to the config file
//! json = "report.json"        # stdout when absent
//! probes = [0.0]              # x positions reported at t = T
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ValidationError;
use crate::grid::{build_uniform_grid, Boundary, ExpectationMode, InitialCondition, ProblemSpec, VolatilityBand};
use crate::solver::SolverConfig;

pub const CONFIG_SCHEMA: &str = "gheat-config/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    IndicatorLeq { threshold: f64 },
    SmoothedIndicator { n: u32 },
    Tabulated { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub a: f64,
    pub b: f64,
    pub horizon: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub mode: ExpectationMode,
    pub initial: InitialConfig,
    pub boundary_left: f64,
    pub boundary_right: f64,
}

fn default_epsilon() -> f64 {
    SolverConfig::default().tolerance
}

fn default_max_newton() -> usize {
    SolverConfig::default().max_iterations
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsBlock {
    pub intervals: usize,
    pub steps: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_newton")]
    pub max_newton: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    #[serde(default)]
    pub probes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemBlock,
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub output: OutputBlock,
    /// Directory relative output paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parse and validate.
    pub fn from_toml(text: &str) -> Result<Self, ValidationError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ValidationError::Other(format!("config: {e}")))?;
        cfg.problem_spec()?;
        cfg.solver_config()?;
        if let Some(x) = cfg.output.probes.iter().find(|&&x| !(x >= cfg.problem.a && x <= cfg.problem.b)) {
            return Err(ValidationError::OutOfDomain {
                x: *x,
                a: cfg.problem.a,
                b: cfg.problem.b,
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ValidationError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ValidationError::Other(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn band(&self) -> Result<VolatilityBand, ValidationError> {
        VolatilityBand::new(self.problem.sigma_low, self.problem.sigma_high)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec, ValidationError> {
        let p = &self.problem;
        let grid = build_uniform_grid(p.a, p.b, self.numerics.intervals, self.numerics.steps, p.horizon)?;
        let initial = match &p.initial {
            InitialConfig::IndicatorLeq { threshold } => InitialCondition::IndicatorLeq(*threshold),
            InitialConfig::SmoothedIndicator { n } => InitialCondition::SmoothedIndicator(*n),
            InitialConfig::Tabulated { values } => InitialCondition::Tabulated(values.clone()),
        };
        ProblemSpec::new(
            grid,
            self.band()?,
            p.mode,
            initial,
            Boundary::Constant(p.boundary_left),
            Boundary::Constant(p.boundary_right),
        )
    }

    pub fn solver_config(&self) -> Result<SolverConfig, ValidationError> {
        SolverConfig::new(self.numerics.epsilon, self.numerics.max_newton)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
