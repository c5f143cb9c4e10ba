//! Scenario presets, the flat key=value config format, and run options.
//!
//! A scenario file is plain text: one `key = value` per line, `#`
//! comments, no nesting. An optional `preset = fiber50` line picks the
//! base; every other key overrides one field of the resolved
//! configuration. The same keys are accepted by the CLI's `--set`.

use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use crate::channel::FiberScenario;
use crate::controller::{ActuatorConfig, Thresholds};
use crate::detection::DetectorConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown preset `{0}` (expected fiber50, fiber75 or fiber100)")]
    UnknownPreset(String),
    #[error("{file}:{line}: {message}")]
    ParseError { file: String, line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value `{value}` for key `{key}`: {message}")]
    InvalidValue { key: String, value: String, message: String },
    #[error("invalid run options: {0}")]
    InvalidRun(String),
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Everything a session needs, fully resolved.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioConfig {
    /// Preset this configuration was derived from.
    pub preset: String,
    pub fiber: FiberScenario,
    pub detector: DetectorConfig,
    pub actuator: ActuatorConfig,
    pub thresholds: Thresholds,
    /// Feedback-cycle iteration cap before NotConverged.
    pub max_control_iters: u32,
    /// Number of NotConverged cycles tolerated before the run aborts.
    pub control_failure_budget: u32,
    /// Sifted-key error rate above which an interval is flagged insecure.
    pub qber_alarm_threshold: f64,
}

pub const PRESET_NAMES: [&str; 3] = ["fiber50", "fiber75", "fiber100"];

/// Builds one of the three built-in presets.
pub fn preset(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let (length_km, interval_s, thresholds, mu_ref) = match name {
        "fiber50" => (50.0, 282.0, Thresholds::new(0.96, 0.05, 0.94), 0.5),
        "fiber75" => (75.0, 186.0, Thresholds::new(0.95, 0.08, 0.93), 1.6),
        "fiber100" => (100.0, 96.0, Thresholds::new(0.95, 0.08, 0.93), 5.1),
        other => return Err(ConfigError::UnknownPreset(other.to_string())),
    };
    Ok(ScenarioConfig {
        preset: name.to_string(),
        fiber: FiberScenario {
            length_km,
            loss_db_per_km: 0.2,
            element_loss_db: 2.0,
            drift_angle_std: FiberScenario::drift_std_for_length(length_km),
            control_interval_s: interval_s,
            source_mean_photons_qkd: 0.1,
            source_mean_photons_ref: mu_ref,
            v_laser_offset_rad: 0.0,
        },
        detector: DetectorConfig::default(),
        actuator: ActuatorConfig::default(),
        thresholds,
        max_control_iters: 400,
        control_failure_budget: 3,
        qber_alarm_threshold: 0.11,
    })
}

/// Applies one key=value override to a resolved configuration.
pub fn apply_override(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<(), ConfigError> {
    let parse_f64 = |key: &str, value: &str| {
        value.trim().parse::<f64>().map_err(|e| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            message: e.to_string(),
        })
    };
    let parse_u32 = |key: &str, value: &str| {
        value.trim().parse::<u32>().map_err(|e| ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            message: e.to_string(),
        })
    };
    match key {
        "length_km" => cfg.fiber.length_km = parse_f64(key, value)?,
        "loss_db_per_km" => cfg.fiber.loss_db_per_km = parse_f64(key, value)?,
        "element_loss_db" => cfg.fiber.element_loss_db = parse_f64(key, value)?,
        "drift_angle_std" => cfg.fiber.drift_angle_std = parse_f64(key, value)?,
        "control_interval_s" => cfg.fiber.control_interval_s = parse_f64(key, value)?,
        "source_mean_photons_qkd" => cfg.fiber.source_mean_photons_qkd = parse_f64(key, value)?,
        "source_mean_photons_ref" => cfg.fiber.source_mean_photons_ref = parse_f64(key, value)?,
        "v_laser_offset_rad" => cfg.fiber.v_laser_offset_rad = parse_f64(key, value)?,
        "detector_efficiency" => cfg.detector.efficiency = parse_f64(key, value)?,
        "dark_prob_h" => cfg.detector.dark_prob_per_gate[0] = parse_f64(key, value)?,
        "dark_prob_v" => cfg.detector.dark_prob_per_gate[1] = parse_f64(key, value)?,
        "dark_prob_q" => cfg.detector.dark_prob_per_gate[2] = parse_f64(key, value)?,
        "dark_prob_r" => cfg.detector.dark_prob_per_gate[3] = parse_f64(key, value)?,
        "pbs_extinction" => cfg.detector.pbs_extinction = parse_f64(key, value)?,
        "monitor_split" => cfg.detector.monitor_split = parse_f64(key, value)?,
        "v_2pi_x1" => cfg.actuator.v_2pi_x1 = parse_f64(key, value)?,
        "v_2pi_x2" => cfg.actuator.v_2pi_x2 = parse_f64(key, value)?,
        "v_min" => cfg.actuator.v_min = parse_f64(key, value)?,
        "v_max" => cfg.actuator.v_max = parse_f64(key, value)?,
        "gain_x1" => cfg.actuator.gain_x1 = parse_f64(key, value)?,
        "gain_x2" => cfg.actuator.gain_x2 = parse_f64(key, value)?,
        "t1" => cfg.thresholds.t1 = parse_f64(key, value)?,
        "t2" => cfg.thresholds.t2 = parse_f64(key, value)?,
        "t3" => cfg.thresholds.t3 = parse_f64(key, value)?,
        "max_control_iters" => cfg.max_control_iters = parse_u32(key, value)?,
        "control_failure_budget" => cfg.control_failure_budget = parse_u32(key, value)?,
        "qber_alarm_threshold" => cfg.qber_alarm_threshold = parse_f64(key, value)?,
        other => return Err(ConfigError::UnknownKey(other.to_string())),
    }
    Ok(())
}

/// Parses scenario file text: optional `preset = ...` base (default
/// fiber50) plus field overrides. `file` is used only in diagnostics.
pub fn parse_scenario_text(text: &str, file: &str) -> Result<ScenarioConfig, ConfigError> {
    // The preset line, wherever it appears, establishes the base first.
    let mut base_name = "fiber50".to_string();
    let mut fields: Vec<(usize, String, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::ParseError {
                file: file.to_string(),
                line: line_no,
                message: format!("expected `key = value`, got `{line}`"),
            });
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key == "preset" {
            base_name = value;
        } else {
            fields.push((line_no, key, value));
        }
    }
    let mut cfg = preset(&base_name)?;
    for (line_no, key, value) in fields {
        apply_override(&mut cfg, &key, &value).map_err(|e| ConfigError::ParseError {
            file: file.to_string(),
            line: line_no,
            message: e.to_string(),
        })?;
    }
    Ok(cfg)
}

/// Resolves `--scenario`: a preset name, otherwise a file path.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioConfig, ConfigError> {
    if PRESET_NAMES.contains(&name_or_path) {
        return preset(name_or_path);
    }
    if !name_or_path.contains(['/', '.']) {
        // Bare identifiers that are not presets are a typo, not a path.
        return Err(ConfigError::UnknownPreset(name_or_path.to_string()));
    }
    let text = std::fs::read_to_string(name_or_path).map_err(|source| ConfigError::Io {
        path: name_or_path.to_string(),
        source,
    })?;
    parse_scenario_text(&text, name_or_path)
}

/// Which end of the session this process runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Both parties in one process over the loopback transport.
    Single,
    Alice,
    Bob,
}

/// Fully-parsed command line for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub mode: Mode,
    pub peer_address: Option<String>,
    pub output_dir: PathBuf,
    pub overrides: Vec<(String, String)>,
}

impl RunConfig {
    /// Checks cross-field invariants and resolves the scenario.
    pub fn resolve(&self) -> Result<ScenarioConfig, ConfigError> {
        if self.duration_s <= 0.0 {
            return Err(ConfigError::InvalidRun("duration must be positive".into()));
        }
        if self.mode != Mode::Single && self.peer_address.is_none() {
            return Err(ConfigError::InvalidRun(
                "alice/bob modes require --peer <host:port>".into(),
            ));
        }
        let mut cfg = load_scenario(&self.scenario)?;
        for (key, value) in &self.overrides {
            apply_override(&mut cfg, key, value)?;
        }
        Ok(cfg)
    }
}
