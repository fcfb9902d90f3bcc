//! Run configuration, read from TOML with one table per module.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::shockcapture::{IndicatorConfig, IndicatorVariable};
use crate::solver::{DissipationSpeed, ErrorReference};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquationConfig {
    pub gamma: f64,
    pub r_gas: f64,
}

impl Default for EquationConfig {
    fn default() -> Self {
        Self { gamma: 1.4, r_gas: 287.15 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Builder name; empty selects the test case default.
    pub builder: String,
    pub cells: Option<[usize; 2]>,
    pub degree: usize,
    /// `[x0, x1, y0, y1]` for the Cartesian builder.
    pub bounds: Option<[f64; 4]>,
    pub periodic: Option<[bool; 2]>,
    /// Mesh in the text format instead of a builder.
    pub file: Option<PathBuf>,
    /// Uniform refinement levels applied after construction.
    pub refine: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { builder: String::new(), cells: None, degree: 4, bounds: None, periodic: None, file: None, refine: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    pub name: String,
    /// Jet only: inject through `|y| <= 0.05` instead of outside it.
    pub jet_centered: bool,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self { name: String::new(), jet_centered: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    Dirichlet,
    Outflow,
    SlipWall,
    /// Outflow for `x < 1/6`, slip wall elsewhere.
    DmrBottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimiterConfig {
    pub shock_capturing: bool,
    pub positivity: bool,
    pub indicator: IndicatorConfig,
}

impl Default for LimiterConfig {
    fn default() -> Self {
        Self { shock_capturing: true, positivity: true, indicator: IndicatorConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmrIndicatorKind {
    Modal,
    Lohner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmrConfig {
    pub enabled: bool,
    pub indicator: AmrIndicatorKind,
    pub variable: IndicatorVariable,
    pub base_level: usize,
    pub med_level: usize,
    pub max_level: usize,
    pub med_threshold: f64,
    pub max_threshold: f64,
    /// Steps between adaptations.
    pub interval: usize,
    pub f_wave: f64,
    /// Adaptation passes applied to the initial condition.
    pub initial_passes: usize,
    /// Modal indicator parameters for adaptation (independent of the
    /// blending indicator).
    pub modal: IndicatorConfig,
}

impl Default for AmrConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            indicator: AmrIndicatorKind::Modal,
            variable: IndicatorVariable::Density,
            base_level: 0,
            med_level: 0,
            max_level: 0,
            med_threshold: 0.05,
            max_threshold: 0.1,
            interval: 1,
            f_wave: 0.2,
            initial_passes: 0,
            modal: IndicatorConfig { alpha_min: 1e-4, ..IndicatorConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeMode {
    Cfl,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    pub mode: TimeMode,
    pub cfl: f64,
    /// Sets both absolute and relative tolerance.
    #[serde(rename = "tolE")]
    pub tol_e: f64,
    /// Initial step for error mode; `None` uses the CFL formula with
    /// `dt_seed_cfl`.
    pub dt_seed: Option<f64>,
    pub dt_seed_cfl: f64,
    /// Defaults to the test case's final time.
    pub final_time: Option<f64>,
    pub max_steps: Option<usize>,
    pub error_reference: ErrorReference,
    pub dissipation: DissipationSpeed,
    /// Compare the means of the pure high- and low-order updates every
    /// `check_means` steps (0 disables).
    pub check_means: usize,
    /// Redo steps whose Taylor-shifted states are inadmissible.
    pub reject_shifted_states: bool,
}

impl Default for TimeConfig {
    fn default() -> Self {
        Self {
            mode: TimeMode::Cfl,
            cfl: 0.1,
            tol_e: 1e-6,
            dt_seed: None,
            dt_seed_cfl: 0.05,
            final_time: None,
            max_steps: None,
            error_reference: ErrorReference::Truncated,
            dissipation: DissipationSpeed::PerPoint,
            check_means: 0,
            reject_shifted_states: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Vtk,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Snapshot every this many accepted steps (0 = only the final state).
    pub interval: usize,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: None, interval: 0, formats: vec![OutputFormat::Vtk] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub equation: EquationConfig,
    pub mesh: MeshConfig,
    pub case: CaseConfig,
    /// Boundary kind per tag name; unlisted tags use the case default.
    pub boundary: BTreeMap<String, BoundaryKind>,
    pub limiter: LimiterConfig,
    pub amr: AmrConfig,
    pub time: TimeConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.time.final_time.is_some_and(|t| !(t > 0.0)) {
            return Err(ConfigError::Invalid("time.final_time must be positive".into()));
        }
        if self.case.name.is_empty() {
            return Err(ConfigError::Invalid("case.name is required".into()));
        }
        if !(self.equation.gamma > 1.0) {
            return Err(ConfigError::Invalid("equation.gamma must exceed 1".into()));
        }
        if self.time.mode == TimeMode::Cfl && !(self.time.cfl > 0.0) {
            return Err(ConfigError::Invalid("time.cfl must be positive".into()));
        }
        if self.time.mode == TimeMode::Error && !(self.time.tol_e > 0.0) {
            return Err(ConfigError::Invalid("time.tolE must be positive".into()));
        }
        if self.amr.enabled && self.amr.interval == 0 {
            return Err(ConfigError::Invalid("amr.interval must be at least 1".into()));
        }
        Ok(())
    }
}
