//! TOML configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trimabs::{InputGrid, LinearSystem, Matrix, OpenBox, Region};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub system: SystemSection,
    pub feedback: FeedbackSection,
    pub abstraction: AbstractionSection,
    #[serde(default)]
    pub check: CheckSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    /// Rows of `A`.
    pub a: Vec<Vec<f64>>,
    /// Rows of `B`.
    pub b: Vec<Vec<f64>>,
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    /// Spacing of the quantized input levels.
    pub input_step: f64,
    #[serde(default)]
    pub input_offset: f64,
    /// Segment length of piecewise-constant inputs.
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSection {
    /// Rows of the stabilizing gain `C`.
    pub c: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractionSection {
    pub epsilon: f64,
    pub eta: f64,
    /// Fixed time quantization; synthesized when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default = "default_tau_step")]
    pub tau_step: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_max: Option<f64>,
    pub region_lower: Vec<f64>,
    pub region_upper: Vec<f64>,
    #[serde(default = "default_catalog_cap")]
    pub catalog_cap: usize,
    #[serde(default = "default_segments")]
    pub segments: usize,
    #[serde(default)]
    pub strict_eta_half: bool,
    /// Extra time quantizations whose certificate is reported by `params`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub compare_tau: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    pub seed: u64,
    /// Low-discrepancy states for the bisimulation check.
    pub states: usize,
    /// Grid points receiving `±epsilon` corner offsets.
    pub corner_anchors: usize,
    pub inputs: usize,
    /// Initial-state pairs for the supervisory admissibility check.
    pub pairs: usize,
    pub pair_inputs: usize,
    pub completeness_states: usize,
    pub completeness_inputs: usize,
    pub cross_checks: usize,
    pub dt: f64,
    /// Divergence check horizon and number of input pairs.
    pub horizon: f64,
    pub trials: usize,
}

fn default_tau_step() -> f64 {
    0.01
}

fn default_catalog_cap() -> usize {
    10_000
}

fn default_segments() -> usize {
    1
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            seed: 1,
            states: 100,
            corner_anchors: 8,
            inputs: 50,
            pairs: 200,
            pair_inputs: 200,
            completeness_states: 30,
            completeness_inputs: 12,
            cross_checks: 32,
            dt: 1e-3,
            horizon: 5.0,
            trials: 100,
        }
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Matrix<f64>, CliError> {
    Matrix::from_rows(rows).map_err(|e| CliError::Config(format!("{name}: {e}")))
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Structural checks beyond what the types enforce.
    pub fn validate(&self) -> Result<(), CliError> {
        let abs = &self.abstraction;
        let chk = &self.check;
        let mut scalars = vec![
            ("system.input_step", self.system.input_step),
            ("system.input_offset", self.system.input_offset),
            ("system.h", self.system.h),
            ("abstraction.epsilon", abs.epsilon),
            ("abstraction.eta", abs.eta),
            ("abstraction.tau_step", abs.tau_step),
            ("check.dt", chk.dt),
            ("check.horizon", chk.horizon),
        ];
        scalars.extend(abs.tau.map(|t| ("abstraction.tau", t)));
        scalars.extend(abs.tau_max.map(|t| ("abstraction.tau_max", t)));
        if let Some((name, _)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(CliError::Config(format!("{name} must be finite")));
        }
        let all = self
            .system
            .a
            .iter()
            .chain(&self.system.b)
            .chain(&self.feedback.c)
            .flatten()
            .chain(&self.system.input_lower)
            .chain(&self.system.input_upper)
            .chain(&abs.region_lower)
            .chain(&abs.region_upper)
            .chain(&abs.compare_tau);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(CliError::Config("matrices and bounds must be finite".into()));
        }
        let sys = self.system()?;
        sys.check_gain(&self.gain()?)
            .map_err(|e| CliError::Config(format!("feedback.c: {e}")))?;
        let region = self.region()?;
        if region.dim() != sys.state_dim() {
            return Err(CliError::Config(format!(
                "region has dimension {}, but A is {}x{}",
                region.dim(),
                sys.state_dim(),
                sys.state_dim()
            )));
        }
        for (name, v) in [
            ("abstraction.epsilon", abs.epsilon),
            ("abstraction.eta", abs.eta),
            ("abstraction.tau_step", abs.tau_step),
            ("check.dt", chk.dt),
        ] {
            if v <= 0.0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        if abs.segments == 0 {
            return Err(CliError::Config("abstraction.segments must be at least 1".into()));
        }
        Ok(())
    }

    pub fn system(&self) -> Result<LinearSystem<f64>, CliError> {
        let s = &self.system;
        let a = matrix("system.a", &s.a)?;
        let b = matrix("system.b", &s.b)?;
        let ubox = OpenBox::new(s.input_lower.clone(), s.input_upper.clone())
            .map_err(|e| CliError::Config(format!("input box: {e}")))?;
        let grid = InputGrid::uniform(&ubox, s.input_step, s.input_offset)
            .map_err(|e| CliError::Config(format!("input grid: {e}")))?;
        LinearSystem::new(a, b, ubox, grid, s.h).map_err(|e| CliError::Config(format!("system: {e}")))
    }

    pub fn gain(&self) -> Result<Matrix<f64>, CliError> {
        matrix("feedback.c", &self.feedback.c)
    }

    pub fn region(&self) -> Result<Region<f64>, CliError> {
        Region::new(
            self.abstraction.region_lower.clone(),
            self.abstraction.region_upper.clone(),
        )
        .map_err(|e| CliError::Config(format!("region: {e}")))
    }
}
