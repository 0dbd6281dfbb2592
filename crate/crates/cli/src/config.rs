use crate::error::CliError;
use platoon_core::simulate::{drag, sine_pulse, DisturbanceProfile};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One experiment: topology, vehicle, gains source, disturbance, leader and
/// integration grid. Relative file paths resolve against the config's directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub topology: String,
    pub tau: f64,
    pub gains: GainsSource,
    #[serde(default = "default_disturbance")]
    pub disturbance: DisturbanceProfile,
    #[serde(default = "default_leader")]
    pub leader: LeaderSpec,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Desired standstill gap between consecutive vehicles; recorded in outputs.
    #[serde(default = "default_spacing_gap")]
    pub spacing_gap: f64,
    /// Verification target for explicit gains; synthesized and file-based gains
    /// carry their own target.
    #[serde(default = "default_gamma_d")]
    pub gamma_d: f64,
    #[serde(default)]
    pub out: Option<String>,
}

fn default_disturbance() -> DisturbanceProfile {
    DisturbanceProfile::Zero
}

fn default_leader() -> LeaderSpec {
    LeaderSpec::ConstantSpeed { v0: 20.0 }
}

fn default_horizon() -> f64 {
    30.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_spacing_gap() -> f64 {
    4.5
}

fn default_gamma_d() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum GainsSource {
    Explicit { k: [f64; 3], c: f64 },
    Synthesize { gamma_d: f64 },
    ControllerFile { path: String },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeaderSpec {
    ConstantSpeed { v0: f64 },
    /// JSON leader file as written by `ingest` (a serialized leader trajectory).
    SampledFile { path: String },
}

/// On-disk controller: what `synthesize` writes and the controller_file gains
/// source reads. `alpha` and `margin` are null for gains that skipped the solver.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControllerFile {
    pub tau: f64,
    pub gamma_d: f64,
    pub k: [f64; 3],
    pub alpha: Option<f64>,
    pub lambda_min: f64,
    pub c: f64,
    pub margin: Option<f64>,
}

/// Loads and schema-validates a config; returns it with its base directory.
pub fn load_config(path: &Path) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

impl ExperimentConfig {
    /// Value checks that serde cannot express; runs before any computation.
    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tau > 0.0) {
            return Err(CliError::Parse(format!("tau = {} must be positive", self.tau)));
        }
        if !(self.gamma_d > 0.0) {
            return Err(CliError::Parse(format!(
                "gamma_d = {} must be positive",
                self.gamma_d
            )));
        }
        if !(self.spacing_gap >= 0.0) {
            return Err(CliError::Parse(format!(
                "spacing_gap = {} must be nonnegative",
                self.spacing_gap
            )));
        }
        // route window and coefficient checks through the core constructors
        match self.disturbance {
            DisturbanceProfile::Zero => {}
            DisturbanceProfile::SinePulse {
                amplitude,
                start,
                end,
                period,
            } => {
                sine_pulse(amplitude, start, end, period)?;
            }
            DisturbanceProfile::Drag { c2, start, end } => {
                drag(c2, start, end)?;
            }
        }
        if let GainsSource::Synthesize { gamma_d } = self.gains {
            if !(gamma_d > 0.0) {
                return Err(CliError::Parse(format!(
                    "gains.gamma_d = {gamma_d} must be positive"
                )));
            }
        }
        Ok(())
    }
}

/// Resolves a config-relative path; absolute paths pass through unchanged.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}
