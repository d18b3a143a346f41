//! TOML configuration schema for runs and sweeps. Annotated examples for
//! every experiment class live in `configs/` at the repository root.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::integrator::{OutputSpacing, Scheme, StepperConfig};
use crate::model::{FlowSpec, ModelParams};
use crate::spectral::{GridSpec, ScalarField};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridConfig {
    pub n: usize,
    #[serde(rename = "L")]
    pub length: f64,
}

impl GridConfig {
    pub fn to_grid(self) -> Result<GridSpec> {
        GridSpec::new(self.n, self.length)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    None,
    Cellular,
    Custom,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kind: FlowKind,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one_u32")]
    pub wavenumber: u32,
    /// Stream-function samples for `kind = "custom"`: n rows of n
    /// comma-separated values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_csv: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            kind: FlowKind::None,
            amplitude: 1.0,
            wavenumber: 1,
            stream_csv: None,
        }
    }
}

impl FlowConfig {
    pub fn to_model(&self, grid: GridSpec, base_dir: &Path) -> Result<FlowSpec> {
        match self.kind {
            FlowKind::None => Ok(FlowSpec::None),
            FlowKind::Cellular => Ok(FlowSpec::Cellular {
                amplitude: self.amplitude,
                wavenumber: self.wavenumber,
            }),
            FlowKind::Custom => {
                let path = self.stream_csv.as_ref().ok_or_else(|| {
                    SimError::Config("custom flow requires stream_csv".into())
                })?;
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    base_dir.join(path)
                };
                let stream = read_field_csv(&path, grid)?;
                Ok(FlowSpec::Custom { stream })
            }
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == FlowKind::None
    }
}

/// Read an n x n field from CSV (n rows, n comma-separated values each).
pub fn read_field_csv(path: &Path, grid: GridSpec) -> Result<ScalarField> {
    let text = std::fs::read_to_string(path)?;
    let n = grid.n();
    let mut values = ndarray::Array2::zeros((n, n));
    let mut rows = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if rows >= n {
            return Err(SimError::Parse(format!(
                "{}: more than {n} rows",
                path.display()
            )));
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != n {
            return Err(SimError::Parse(format!(
                "{}: row {i} has {} columns, expected {n}",
                path.display(),
                cols.len()
            )));
        }
        for (j, c) in cols.iter().enumerate() {
            values[[rows, j]] = c
                .trim()
                .parse::<f64>()
                .map_err(|e| SimError::Parse(format!("{}: row {i}: {e}", path.display())))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(SimError::Parse(format!(
            "{}: {rows} rows, expected {n}",
            path.display()
        )));
    }
    ScalarField::from_values(grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IcKind {
    Gaussian,
    TwoGaussians,
    Plateau,
    CustomCsv,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IcConfig {
    pub kind: IcKind,
    /// Target total mass; the sampled field is renormalized to hit it
    /// exactly (up to round-off).
    pub mass: f64,
    /// Width: Gaussian standard deviation, or plateau radius.
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// Bump centers; defaults to the box center (and a seeded random
    /// placement for the second bump of `two_gaussians`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<[f64; 2]>>,
    /// Seed for randomized placement.
    #[serde(default)]
    pub seed: u64,
    /// Field samples for `kind = "custom_csv"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_sigma() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacingKind {
    Linear,
    Geometric,
}

/// Output cadence and artifact selection. When `spacing` is omitted the
/// harness defaults to geometric for chi = 0 runs (fits are against log t)
/// and linear otherwise.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spacing: Option<SpacingKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_first: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_per_decade: Option<u32>,
    /// Field snapshots are written at the first output time at or after
    /// each requested instant.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshot_times: Vec<f64>,
}

impl OutputConfig {
    pub fn resolve(&self, chi: f64, t_end: f64) -> Result<OutputSpacing> {
        let kind = self.spacing.unwrap_or(if chi == 0.0 {
            SpacingKind::Geometric
        } else {
            SpacingKind::Linear
        });
        match kind {
            SpacingKind::Linear => {
                let interval = self.interval.unwrap_or(t_end / 100.0);
                if !(interval > 0.0) {
                    return Err(SimError::Config("output interval must be > 0".into()));
                }
                Ok(OutputSpacing::Linear { interval })
            }
            SpacingKind::Geometric => {
                let t_first = self.t_first.unwrap_or(t_end / 1000.0);
                let ppd = self.points_per_decade.unwrap_or(16);
                if !(t_first > 0.0) || ppd == 0 {
                    return Err(SimError::Config(
                        "geometric output needs t_first > 0 and points_per_decade >= 1".into(),
                    ));
                }
                Ok(OutputSpacing::Geometric {
                    t_first,
                    points_per_decade: ppd,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepperSection {
    pub t_end: f64,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub dt_max: f64,
    #[serde(default = "default_tol_pos")]
    pub tol_pos: f64,
    #[serde(default)]
    pub scheme: Scheme,
    /// Order of the regularity-monitor seminorm.
    #[serde(default = "default_hs_order")]
    pub hs_order: f64,
    /// 4th-order spectral stabilization coefficient (0 disables it; see
    /// the integrator docs). Mass- and second-moment-neutral.
    #[serde(default)]
    pub hyper_nu4: f64,
}

fn default_cfl() -> f64 {
    0.5
}
fn default_tol_pos() -> f64 {
    1e-6
}
fn default_hs_order() -> f64 {
    2.0
}

/// Everything one simulation needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub label: String,
    pub grid: GridConfig,
    pub model: ModelParams,
    #[serde(default)]
    pub flow: FlowConfig,
    pub ic: IcConfig,
    pub stepper: StepperSection,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| SimError::Config(format!("bad run config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty()
            || !self
                .label
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
        {
            return Err(SimError::Config(format!(
                "label must be nonempty and filesystem-safe, got {:?}",
                self.label
            )));
        }
        self.grid.to_grid()?;
        self.model.validate()?;
        if !(self.ic.mass > 0.0) {
            return Err(SimError::Config("initial mass must be positive".into()));
        }
        if !(self.ic.sigma > 0.0) {
            return Err(SimError::Config("ic width must be positive".into()));
        }
        self.stepper_config()?.validate()?;
        Ok(())
    }

    /// Assemble the integrator-level stepper config.
    pub fn stepper_config(&self) -> Result<StepperConfig> {
        Ok(StepperConfig {
            t_end: self.stepper.t_end,
            cfl: self.stepper.cfl,
            dt_max: self.stepper.dt_max,
            tol_pos: self.stepper.tol_pos,
            scheme: self.stepper.scheme,
            output: self.output.resolve(self.model.chi, self.stepper.t_end)?,
            hs_order: self.stepper.hs_order,
            hyper_nu4: self.stepper.hyper_nu4,
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub chi: Vec<f64>,
    #[serde(default)]
    pub amplitude: Vec<f64>,
}

/// A cartesian sweep over epsilon and/or chi (and optionally the flow
/// amplitude) around a base run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    pub axes: SweepAxes,
    pub base: RunConfig,
}

fn default_parallelism() -> usize {
    1
}

const SWEEP_CAP: usize = 64;

impl SweepConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: SweepConfig = toml::from_str(text)
            .map_err(|e| SimError::Config(format!("bad sweep config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.parallelism == 0 {
            return Err(SimError::Config("parallelism must be >= 1".into()));
        }
        let n = self.expanded_len();
        if n == 0 {
            return Err(SimError::Config("sweep axes are all empty".into()));
        }
        if n > SWEEP_CAP {
            return Err(SimError::Config(format!(
                "sweep would expand to {n} runs, cap is {SWEEP_CAP}"
            )));
        }
        Ok(())
    }

    fn axis_or_base<'a>(values: &'a [f64], base: f64) -> Vec<f64> {
        if values.is_empty() {
            vec![base]
        } else {
            values.to_vec()
        }
    }

    pub fn expanded_len(&self) -> usize {
        Self::axis_or_base(&self.axes.epsilon, self.base.model.epsilon).len()
            * Self::axis_or_base(&self.axes.chi, self.base.model.chi).len()
            * Self::axis_or_base(&self.axes.amplitude, self.base.flow.amplitude).len()
    }

    /// Cartesian expansion into per-run configs with derived labels.
    pub fn expand(&self) -> Vec<RunConfig> {
        let eps_axis = Self::axis_or_base(&self.axes.epsilon, self.base.model.epsilon);
        let chi_axis = Self::axis_or_base(&self.axes.chi, self.base.model.chi);
        let amp_axis = Self::axis_or_base(&self.axes.amplitude, self.base.flow.amplitude);
        let mut runs = Vec::new();
        for &eps in &eps_axis {
            for &chi in &chi_axis {
                for &amp in &amp_axis {
                    let mut run = self.base.clone();
                    run.model.epsilon = eps;
                    run.model.chi = chi;
                    run.flow.amplitude = amp;
                    let mut label = format!("{}-eps{}", self.base.label, fmt_axis(eps));
                    label.push_str(&format!("-chi{}", fmt_axis(chi)));
                    if amp_axis.len() > 1 {
                        label.push_str(&format!("-amp{}", fmt_axis(amp)));
                    }
                    run.label = label;
                    runs.push(run);
                }
            }
        }
        runs
    }
}

fn fmt_axis(v: f64) -> String {
    let s = format!("{v}");
    s.replace('-', "m")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
label = "demo"

[grid]
n = 32
L = 8.0

[model]
chi = 0.0
epsilon = 0.5

[ic]
kind = "gaussian"
mass = 1.0
sigma = 0.5

[stepper]
t_end = 1.0
dt_max = 0.01
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(cfg.model.q, 2.0);
        assert_eq!(cfg.stepper.cfl, 0.5);
        assert!(cfg.flow.is_none());
        // chi = 0 defaults to geometric output
        let sc = cfg.stepper_config().unwrap();
        assert!(matches!(
            sc.output,
            OutputSpacing::Geometric { .. }
        ));
    }

    #[test]
    fn bad_grid_is_a_config_error() {
        let text = MINIMAL.replace("n = 32", "n = 33");
        assert!(matches!(
            RunConfig::from_toml_str(&text),
            Err(SimError::Config(_))
        ));
    }

    #[test]
    fn bad_label_rejected() {
        let text = MINIMAL.replace("\"demo\"", "\"has space\"");
        assert!(RunConfig::from_toml_str(&text).is_err());
    }

    const SWEEP_BASE: &str = r#"
[base]
label = "sweep"

[base.grid]
n = 32
L = 8.0

[base.model]
chi = 0.0
epsilon = 0.5

[base.ic]
kind = "gaussian"
mass = 1.0
sigma = 0.5

[base.stepper]
t_end = 1.0
dt_max = 0.01
"#;

    #[test]
    fn sweep_expansion_and_cap() {
        let text = format!(
            r#"
parallelism = 2

[axes]
epsilon = [0.25, 0.5, 1.0]
chi = [0.0, 10.0]
{SWEEP_BASE}"#
        );
        let sweep = SweepConfig::from_toml_str(&text).unwrap();
        let runs = sweep.expand();
        assert_eq!(runs.len(), 6);
        assert_eq!(runs[0].label, "sweep-eps0.25-chi0");
        assert_eq!(runs[5].label, "sweep-eps1-chi10");
        let labels: std::collections::HashSet<_> =
            runs.iter().map(|r| r.label.clone()).collect();
        assert_eq!(labels.len(), 6, "labels must be unique");
    }

    #[test]
    fn one_by_one_sweep_is_single_run() {
        let text = format!(
            r#"
[axes]
epsilon = [1.0]
{SWEEP_BASE}"#
        );
        let sweep = SweepConfig::from_toml_str(&text).unwrap();
        assert_eq!(sweep.expand().len(), 1);
    }
}
