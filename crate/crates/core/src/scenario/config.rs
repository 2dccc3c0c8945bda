use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::comm::{GpsSpoofParams, PaaParams, RbaParams, SybilParams};
use crate::attack::perception::{AttachParams, DetachParams, PerturbParams};
use crate::detector::DetectorModel;

/// Relative tolerance for "integral multiple" checks on time quantities.
const INTEGRAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{path}`: {reason}")]
    Schema { path: String, reason: String },
    #[error("inconsistent configuration: {0}")]
    CrossField(String),
}

fn schema(path: impl Into<String>, reason: impl fmt::Display) -> ConfigError {
    ConfigError::Schema {
        path: path.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncMode {
    /// The traffic role leads; the world role mirrors its states.
    TrafficDriven,
    /// The world role leads; the traffic role mirrors its states.
    WorldDriven,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapSpec {
    #[serde(default = "default_map_name")]
    pub name: String,
    /// Accepted for compatibility with richer world simulators; not simulated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weather: Option<serde_json::Value>,
}

fn default_map_name() -> String {
    "flat".into()
}

impl Default for MapSpec {
    fn default() -> Self {
        Self {
            name: default_map_name(),
            weather: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub id: String,
    pub route: Vec<[f64; 2]>,
    pub speed_mps: f64,
    #[serde(default = "default_length")]
    pub length: f64,
    #[serde(default = "default_width")]
    pub width: f64,
    #[serde(default = "default_height")]
    pub height: f64,
    #[serde(default)]
    pub is_ego: bool,
    #[serde(default)]
    pub is_attacker: bool,
    #[serde(default)]
    pub loop_route: bool,
    /// Whether the vehicle carries a V2X unit (emits CAMs, keeps an LDM).
    #[serde(default = "yes")]
    pub v2x: bool,
}

fn default_length() -> f64 {
    4.5
}
fn default_width() -> f64 {
    1.8
}
fn default_height() -> f64 {
    1.6
}
fn yes() -> bool {
    true
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            id: String::new(),
            route: vec![[0.0, 0.0], [1.0, 0.0]],
            speed_mps: 0.0,
            length: default_length(),
            width: default_width(),
            height: default_height(),
            is_ego: false,
            is_attacker: false,
            loop_route: false,
            v2x: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensorKind {
    #[default]
    Lidar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorSpec {
    pub kind: SensorKind,
    pub channels: u32,
    pub rotation_hz: f64,
    pub range_m: f64,
    pub points_per_channel: u32,
    /// [min, max] elevation in degrees.
    pub vertical_fov: [f64; 2],
    /// Sensor origin relative to the ego center, in the ego frame.
    pub mount_offset: [f64; 3],
    /// Standard deviation of the range noise.
    pub noise_sigma_m: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            kind: SensorKind::Lidar,
            channels: 64,
            rotation_hz: 10.0,
            range_m: 100.0,
            points_per_channel: 1024,
            vertical_fov: [-24.9, 2.0],
            mount_offset: [0.0, 0.0, 1.0],
            noise_sigma_m: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommSpec {
    /// Defaults to the master tick.
    pub cam_interval_s: Option<f64>,
    /// Disc reception model; stands in for transmission power.
    pub reception_radius_m: f64,
    pub enabled: bool,
    /// Messages retained per station in each LDM.
    pub ldm_history: usize,
}

impl Default for CommSpec {
    fn default() -> Self {
        Self {
            cam_interval_s: None,
            reception_radius_m: 300.0,
            enabled: true,
            ldm_history: 5,
        }
    }
}

/// One attack activation: `{"type": ..., "params": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum AttackSpec {
    Perturb(PerturbParams),
    Detach(DetachParams),
    Attach(AttachParams),
    Sybil(SybilParams),
    Rba(RbaParams),
    Paa(PaaParams),
    GpsSpoof(GpsSpoofParams),
}

impl AttackSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AttackSpec::Perturb(_) => "perturb",
            AttackSpec::Detach(_) => "detach",
            AttackSpec::Attach(_) => "attach",
            AttackSpec::Sybil(_) => "sybil",
            AttackSpec::Rba(_) => "rba",
            AttackSpec::Paa(_) => "paa",
            AttackSpec::GpsSpoof(_) => "gps_spoof",
        }
    }

    pub fn is_perception(&self) -> bool {
        matches!(
            self,
            AttackSpec::Perturb(_) | AttackSpec::Detach(_) | AttackSpec::Attach(_)
        )
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            AttackSpec::Perturb(p) => p.validate(),
            AttackSpec::Detach(p) => p.validate(),
            AttackSpec::Attach(p) => p.validate(),
            AttackSpec::Sybil(p) => p.validate(),
            AttackSpec::Rba(p) => p.validate(),
            AttackSpec::Paa(p) => p.validate(),
            AttackSpec::GpsSpoof(p) => p.validate(),
        }
    }
}

/// The single document that drives a whole session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration_s: f64,
    pub dt_s: f64,
    pub mode: SyncMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub map: MapSpec,
    pub vehicles: Vec<VehicleSpec>,
    #[serde(default = "default_sensors")]
    pub sensors: Vec<SensorSpec>,
    #[serde(default)]
    pub comm: CommSpec,
    #[serde(default)]
    pub attacks: Vec<AttackSpec>,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub detector: DetectorModel,
}

fn default_sensors() -> Vec<SensorSpec> {
    vec![SensorSpec::default()]
}

fn default_output_dir() -> String {
    "out".into()
}

fn integral_ratio(num: f64, den: f64) -> Option<u64> {
    let r = num / den;
    let n = r.round();
    ((r - n).abs() <= INTEGRAL_TOL * r.abs().max(1.0)).then_some(n as u64)
}

impl ScenarioConfig {
    /// round(duration / dt).
    pub fn tick_count(&self) -> u64 {
        (self.duration_s / self.dt_s).round() as u64
    }

    /// Master ticks between CAM emissions.
    pub fn cam_interval_ticks(&self) -> u64 {
        match self.comm.cam_interval_s {
            None => 1,
            Some(i) => integral_ratio(i, self.dt_s).unwrap_or(1).max(1),
        }
    }

    pub fn ego(&self) -> &VehicleSpec {
        self.vehicles
            .iter()
            .find(|v| v.is_ego)
            .expect("validated config has an ego")
    }

    pub fn lidar(&self) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.kind == SensorKind::Lidar)
    }

    pub fn has_attacks(&self) -> bool {
        !self.attacks.is_empty()
    }

    /// Check every invariant the parser guarantees.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(schema("dt_s", "must be a positive finite number"));
        }
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(schema("duration_s", "must be a non-negative finite number"));
        }
        if integral_ratio(self.duration_s, self.dt_s).is_none() {
            return Err(ConfigError::CrossField(format!(
                "duration_s {} is not an integral multiple of dt_s {}",
                self.duration_s, self.dt_s
            )));
        }

        let mut ids = BTreeSet::new();
        for (i, v) in self.vehicles.iter().enumerate() {
            let at = |f: &str| format!("vehicles[{i}].{f}");
            if v.id.is_empty() {
                return Err(schema(at("id"), "must not be empty"));
            }
            if v.id.starts_with("ghost:") {
                return Err(schema(at("id"), "the `ghost:` prefix is reserved"));
            }
            if !ids.insert(v.id.as_str()) {
                return Err(schema(at("id"), format!("duplicate vehicle id `{}`", v.id)));
            }
            if v.route.len() < 2 {
                return Err(schema(at("route"), "needs at least 2 waypoints"));
            }
            if v.route.iter().flatten().any(|c| !c.is_finite()) {
                return Err(schema(at("route"), "waypoints must be finite"));
            }
            if !(v.speed_mps >= 0.0 && v.speed_mps.is_finite()) {
                return Err(schema(at("speed_mps"), "must be >= 0"));
            }
            for (name, d) in [("length", v.length), ("width", v.width), ("height", v.height)] {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(schema(at(name), "must be > 0"));
                }
            }
        }
        match self.vehicles.iter().filter(|v| v.is_ego).count() {
            1 => {}
            n => {
                return Err(schema(
                    "vehicles",
                    format!("exactly one vehicle must be flagged is_ego, found {n}"),
                ))
            }
        }

        for (i, s) in self.sensors.iter().enumerate() {
            let at = |f: &str| format!("sensors[{i}].{f}");
            if !(s.range_m > 0.0) {
                return Err(schema(at("range_m"), "must be > 0"));
            }
            if s.channels < 1 {
                return Err(schema(at("channels"), "must be >= 1"));
            }
            if s.points_per_channel < 1 {
                return Err(schema(at("points_per_channel"), "must be >= 1"));
            }
            if !(s.vertical_fov[0] < s.vertical_fov[1]) {
                return Err(schema(at("vertical_fov"), "min must be below max"));
            }
            if !(s.noise_sigma_m >= 0.0) {
                return Err(schema(at("noise_sigma_m"), "must be >= 0"));
            }
        }

        if let Some(interval) = self.comm.cam_interval_s {
            if !(interval > 0.0) {
                return Err(schema("comm.cam_interval_s", "must be > 0"));
            }
            match integral_ratio(interval, self.dt_s) {
                Some(n) if n >= 1 => {}
                _ => {
                    return Err(ConfigError::CrossField(format!(
                        "comm.cam_interval_s {interval} is not an integer multiple of dt_s {}",
                        self.dt_s
                    )))
                }
            }
        }
        if !(self.comm.reception_radius_m >= 0.0) {
            return Err(schema("comm.reception_radius_m", "must be >= 0"));
        }

        self.detector
            .validate()
            .map_err(|reason| schema("detector", reason))?;

        for (i, a) in self.attacks.iter().enumerate() {
            a.validate()
                .map_err(|reason| schema(format!("attacks[{i}].params"), reason))?;
            self.check_attack_refs(i, a)?;
        }
        Ok(())
    }

    fn check_attack_refs(&self, i: usize, attack: &AttackSpec) -> Result<(), ConfigError> {
        let known = |id: &str| self.vehicles.iter().any(|v| v.id == id);
        let has_attacker = self.vehicles.iter().any(|v| v.is_attacker);
        let refs: Vec<&str> = match attack {
            AttackSpec::Sybil(p) => p.attacker.iter().map(String::as_str).collect(),
            AttackSpec::Rba(p) => p.targets.iter().map(String::as_str).collect(),
            AttackSpec::Paa(p) => p.targets.iter().map(String::as_str).collect(),
            _ => return Ok(()),
        };
        if let Some(bad) = refs.iter().find(|id| !known(id)) {
            return Err(ConfigError::CrossField(format!(
                "attacks[{i}] references unknown vehicle `{bad}`"
            )));
        }
        if refs.is_empty() && !has_attacker {
            return Err(ConfigError::CrossField(format!(
                "attacks[{i}] ({}) names no target and no vehicle is flagged is_attacker",
                attack.name()
            )));
        }
        Ok(())
    }
}

/// Parse and validate a scenario document.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(&mut *de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if inner.is_data() {
            schema(path, strip_position(&inner))
        } else {
            ConfigError::Syntax {
                line: inner.line(),
                column: inner.column(),
                message: strip_position(&inner),
            }
        }
    })?;
    de.end().map_err(|e| ConfigError::Syntax {
        line: e.line(),
        column: e.column(),
        message: strip_position(&e),
    })?;
    config.validate()?;
    Ok(config)
}

fn strip_position(e: &serde_json::Error) -> String {
    let s = e.to_string();
    match s.rfind(" at line ") {
        Some(i) => s[..i].to_string(),
        None => s,
    }
}
