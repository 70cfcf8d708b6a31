//! Versioned JSON configuration holding every tunable default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::discretization::PidGains;
use crate::plant::{LinearizationBackend, RoadSurface, VehicleParams};
use crate::scheduler::RatePolicy;
use crate::stability::{CalibrationSettings, DiscretizationMethod, GridRange, LoopSpec};
use crate::supervisor::{GuardTable, ModePeriods};

pub const SCHEMA_VERSION: u32 = 1;

/// The shipped defaults, kept byte-for-byte in sync with [`Config::default`].
pub const DEFAULT_CONFIG_JSON: &str = include_str!("../default-config.json");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported schema_version {0} (expected {SCHEMA_VERSION})")]
    Schema(u32),
    #[error("invalid config field {field}: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccConfig {
    pub enabled: bool,
    /// ACC period while active (s).
    pub fast_period: f64,
    /// ACC period while suspended (s).
    pub slow_period: f64,
    /// Per-job cost of the ACC task (s).
    pub wcet: f64,
    /// Speed-tracking gains: acceleration (m/s^2) per m/s of error, and per m.
    pub kp: f64,
    pub ki: f64,
    /// Acceleration authority of the ACC (m/s^2).
    pub max_accel: f64,
}

impl Default for AccConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            fast_period: 5e-4,
            slow_period: 2e-3,
            wcet: 2e-5,
            kp: 0.6,
            ki: 0.05,
            max_accel: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    /// Slip set-point of the braking controller.
    pub lambda_d: f64,
    /// Actuator limit on braking torque (N m); the controller output is
    /// clamped to `[0, max_torque]` and the clamped value is fed back.
    pub max_torque: f64,
    /// Speed (m/s) under which the vehicle is declared stopped.
    pub rest_speed: f64,
    /// Plant sub-steps per control period.
    pub substeps: u32,
    /// Upper bound on the plant step (s); long periods use more sub-steps.
    pub max_substep: f64,
    /// Simulated-time limit for braking runs (s).
    pub time_cap: f64,
    /// Spacing of recorded trace samples (s); zero records every plant step.
    pub trace_interval: f64,
    /// Samples at or below this speed (m/s) are excluded from slip metrics.
    pub slip_floor: f64,
    /// Pedal pressure used for panic braking.
    pub panic_bpp: f64,
    /// Time constant (s) and acceleration bound (m/s^2) of the kinematic speed follower.
    pub cruise_time_constant: f64,
    pub cruise_max_accel: f64,
    /// Trace spacing (s) for profile-driven runs; zero records every step.
    pub cruise_trace_interval: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            lambda_d: 0.2,
            max_torque: 4000.0,
            rest_speed: 0.5,
            substeps: 10,
            max_substep: 1e-4,
            time_cap: 120.0,
            trace_interval: 1e-3,
            slip_floor: 2.0,
            panic_bpp: 1.0,
            cruise_time_constant: 2.0,
            cruise_max_accel: 3.0,
            cruise_trace_interval: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsConfig {
    pub unit_circle_eps: f64,
    pub linearization: LinearizationBackend,
    pub discretization: DiscretizationMethod,
    /// Surface used for stability analysis when none is given.
    pub analysis_surface: String,
    pub surface_v: GridRange,
    pub surface_lambda: GridRange,
    pub bode_points: usize,
    pub period_search_tol: f64,
    pub calibration: CalibrationSettings,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            unit_circle_eps: 1e-9,
            linearization: LinearizationBackend::AsPrinted,
            discretization: DiscretizationMethod::Zoh,
            analysis_surface: "dry_asphalt".into(),
            surface_v: GridRange {
                min: 5.0,
                max: 200.0,
                step: 5.0,
            },
            surface_lambda: GridRange {
                min: 0.0,
                max: 1.0,
                step: 0.05,
            },
            bode_points: 200,
            period_search_tol: 1e-7,
            calibration: CalibrationSettings::default(),
        }
    }
}

/// Settings of the canned experiment bundles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceConfig {
    pub table1_v0: f64,
    pub max_relative_gap: f64,
    pub fig8_v0: f64,
    pub fig8_surface: String,
    pub fig8_coarse_period: f64,
    pub fig8_fine_period: f64,
    /// Start-up interval (s) excluded when checking the fine-period slip band.
    pub fig8_transient: f64,
    pub fig8_band: f64,
    pub fig8_variance_ratio: f64,
    pub bode_v_kmh: f64,
    pub bode_lambda: f64,
    pub bode_periods: Vec<f64>,
    pub savings_range: (f64, f64),
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            table1_v0: 200.0,
            max_relative_gap: 0.01,
            fig8_v0: 100.0,
            fig8_surface: "dry_asphalt".into(),
            fig8_coarse_period: 1.0,
            fig8_fine_period: 0.01,
            fig8_transient: 0.5,
            fig8_band: 0.1,
            fig8_variance_ratio: 2.0,
            bode_v_kmh: 60.0,
            bode_lambda: 0.2,
            bode_periods: vec![0.01, 1e-4],
            savings_range: (0.30, 0.50),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    pub vehicle: VehicleParams,
    pub surfaces: Vec<RoadSurface>,
    pub gains: PidGains,
    pub modes: ModePeriods,
    pub guard_table: GuardTable,
    /// Consecutive cycles a slow-down guard must hold.
    pub debounce: u32,
    /// Per-job cost of the braking controller (s).
    pub wcet: f64,
    pub acc: AccConfig,
    pub simulation: SimulationConfig,
    pub numerics: NumericsConfig,
    pub reproduce: ReproduceConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            vehicle: VehicleParams::default(),
            surfaces: RoadSurface::default_set(),
            // Output of `calibrate` with the braking screen on the default grids.
            gains: PidGains {
                kp: 1e4,
                ki: 7e4,
                kd: 0.1,
            },
            modes: ModePeriods::default(),
            guard_table: GuardTable::default(),
            debounce: 3,
            wcet: 2e-5,
            acc: AccConfig::default(),
            simulation: SimulationConfig::default(),
            numerics: NumericsConfig::default(),
            reproduce: ReproduceConfig::default(),
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn surface(&self, name: &str) -> Result<&RoadSurface, ConfigError> {
        self.surfaces
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| invalid("surface", format!("unknown road surface '{name}'")))
    }

    pub fn rate_policy(&self) -> RatePolicy {
        RatePolicy {
            acc_fast: self.acc.fast_period,
            acc_slow: self.acc.slow_period,
            wcet_abs: self.wcet,
            wcet_acc: self.acc.wcet,
        }
    }

    /// Loop description for stability analysis on a named surface.
    pub fn loop_spec(&self, surface: &str) -> Result<LoopSpec, ConfigError> {
        Ok(LoopSpec {
            params: self.vehicle,
            surface: self.surface(surface)?.clone(),
            gains: self.gains,
            linearization: self.numerics.linearization,
            method: self.numerics.discretization,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        self.vehicle.validate().map_err(|e| invalid("vehicle", e))?;
        if self.surfaces.is_empty() {
            return Err(invalid("surfaces", "at least one surface required"));
        }
        for (i, s) in self.surfaces.iter().enumerate() {
            s.validate().map_err(|e| invalid(&format!("surfaces[{i}]"), e))?;
            if self.surfaces[..i].iter().any(|o| o.name == s.name) {
                return Err(invalid(
                    &format!("surfaces[{i}]"),
                    format!("duplicate name '{}'", s.name),
                ));
            }
        }
        PidGains::new(self.gains.kp, self.gains.ki, self.gains.kd).map_err(|e| invalid("gains", e))?;
        self.modes.validate().map_err(|e| invalid("modes", e))?;
        self.guard_table.validate().map_err(|e| invalid("guard_table", e))?;
        if self.debounce == 0 {
            return Err(invalid("debounce", "must be at least 1"));
        }
        let positive = |field: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(field, format!("{x} must be positive and finite")))
            }
        };
        positive("wcet", self.wcet)?;
        if self.wcet > self.modes.e {
            return Err(invalid("wcet", "exceeds the emergency-mode period"));
        }
        positive("acc.fast_period", self.acc.fast_period)?;
        positive("acc.slow_period", self.acc.slow_period)?;
        positive("acc.wcet", self.acc.wcet)?;
        positive("acc.max_accel", self.acc.max_accel)?;
        if self.acc.fast_period > self.acc.slow_period {
            return Err(invalid("acc.fast_period", "must not exceed acc.slow_period"));
        }
        let sim = &self.simulation;
        if !(sim.lambda_d > 0.0 && sim.lambda_d < 1.0) {
            return Err(invalid("simulation.lambda_d", "must lie in (0, 1)"));
        }
        positive("simulation.max_torque", sim.max_torque)?;
        positive("simulation.rest_speed", sim.rest_speed)?;
        positive("simulation.max_substep", sim.max_substep)?;
        positive("simulation.time_cap", sim.time_cap)?;
        positive("simulation.cruise_time_constant", sim.cruise_time_constant)?;
        positive("simulation.cruise_max_accel", sim.cruise_max_accel)?;
        if sim.substeps == 0 {
            return Err(invalid("simulation.substeps", "must be at least 1"));
        }
        if !(sim.trace_interval >= 0.0 && sim.trace_interval.is_finite()) {
            return Err(invalid("simulation.trace_interval", "must be non-negative"));
        }
        if !(sim.cruise_trace_interval >= 0.0 && sim.cruise_trace_interval.is_finite()) {
            return Err(invalid("simulation.cruise_trace_interval", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&sim.panic_bpp) {
            return Err(invalid("simulation.panic_bpp", "must lie in [0, 1]"));
        }
        let num = &self.numerics;
        positive("numerics.unit_circle_eps", num.unit_circle_eps)?;
        positive("numerics.period_search_tol", num.period_search_tol)?;
        if num.bode_points < 2 {
            return Err(invalid("numerics.bode_points", "must be at least 2"));
        }
        self.surface(&num.analysis_surface)?;
        for (field, g) in [
            ("numerics.surface_v", &num.surface_v),
            ("numerics.surface_lambda", &num.surface_lambda),
        ] {
            GridRange::new(g.min, g.max, g.step).map_err(|e| invalid(field, e))?;
        }
        let rep = &self.reproduce;
        self.surface(&rep.fig8_surface)?;
        positive("reproduce.fig8_coarse_period", rep.fig8_coarse_period)?;
        positive("reproduce.fig8_fine_period", rep.fig8_fine_period)?;
        positive("reproduce.table1_v0", rep.table1_v0)?;
        positive("reproduce.fig8_v0", rep.fig8_v0)?;
        for p in &rep.bode_periods {
            positive("reproduce.bode_periods", *p)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_defaults_match_code() {
        let shipped = Config::from_json(DEFAULT_CONFIG_JSON).unwrap();
        assert_eq!(shipped, Config::default());
        assert_eq!(DEFAULT_CONFIG_JSON, Config::default().to_json());
    }

    #[test]
    fn partial_config_fills_defaults() {
        let cfg = Config::from_json(r#"{"schema_version": 1, "debounce": 5}"#).unwrap();
        assert_eq!(cfg.debounce, 5);
        assert_eq!(cfg.modes, ModePeriods::default());
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(
            Config::from_json(r#"{"schema_version": 2}"#),
            Err(ConfigError::Schema(2))
        ));
        assert!(Config::from_json(r#"{"modes": {"n0": 1e-4, "n1": 1.5e-4, "e": 1e-4}}"#).is_err());
        assert!(Config::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(Config::from_json(r#"{"numerics": {"analysis_surface": "ice"}}"#).is_err());
    }
}
