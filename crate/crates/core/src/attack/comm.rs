//! CAM generation, Local Dynamic Maps, and attacks on the V2X channel.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{add, norm, normalize_angle, sub, Point3, Pose};
use crate::scenario::CommSpec;
use crate::seed::{self, SimRng};
use crate::world::VehicleState;

pub const GHOST_PREFIX: &str = "ghost:";

/// The subset of a Cooperative Awareness Message the framework models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CamMessage {
    pub station_id: String,
    pub generation_time_s: f64,
    /// Map frame.
    pub position: Point3,
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdmEntry {
    pub latest: CamMessage,
    /// Oldest first; includes `latest`.
    pub history: Vec<CamMessage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDynamicMap {
    pub owner_id: String,
    pub entries: BTreeMap<String, LdmEntry>,
}

impl LocalDynamicMap {
    pub fn new(owner_id: &str) -> Self {
        LocalDynamicMap {
            owner_id: owner_id.to_string(),
            entries: BTreeMap::new(),
        }
    }

    pub fn station_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// One CAM per given vehicle carrying its true kinematics.
pub fn emit_cams(states: &[VehicleState], t: f64, comm: &CommSpec) -> Vec<CamMessage> {
    if !comm.enabled {
        return Vec::new();
    }
    states
        .iter()
        .map(|s| CamMessage {
            station_id: s.id.clone(),
            generation_time_s: t,
            position: s.position,
            speed: s.speed,
            heading: normalize_angle(s.yaw),
        })
        .collect()
}

fn planar_distance(a: Point3, b: Point3) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Merge the messages the owner can hear (disc model on reported positions).
pub fn update_ldm(
    ldm: &mut LocalDynamicMap,
    received: &[CamMessage],
    owner: &VehicleState,
    comm: &CommSpec,
) {
    for msg in received {
        if msg.station_id == ldm.owner_id
            || planar_distance(msg.position, owner.position) > comm.reception_radius_m
        {
            continue;
        }
        match ldm.entries.get_mut(&msg.station_id) {
            None => {
                ldm.entries.insert(
                    msg.station_id.clone(),
                    LdmEntry {
                        latest: msg.clone(),
                        history: vec![msg.clone()],
                    },
                );
            }
            Some(entry) => {
                if msg.generation_time_s >= entry.latest.generation_time_s {
                    entry.latest = msg.clone();
                }
                let at = entry
                    .history
                    .partition_point(|h| h.generation_time_s <= msg.generation_time_s);
                entry.history.insert(at, msg.clone());
            }
        }
        let entry = ldm.entries.get_mut(&msg.station_id).expect("just inserted");
        let excess = entry.history.len().saturating_sub(comm.ldm_history.max(1));
        entry.history.drain(..excess);
    }
}

fn in_window(t: f64, start: Option<f64>, end: Option<f64>) -> bool {
    start.is_none_or(|s| t >= s) && end.is_none_or(|e| t <= e)
}

fn check_window(start: Option<f64>, end: Option<f64>) -> Result<(), String> {
    if let (Some(s), Some(e)) = (start, end) {
        if s > e {
            return Err("start_s must not exceed end_s".into());
        }
    }
    Ok(())
}

fn default_ring() -> f64 {
    5.0
}

fn default_rho() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SybilParams {
    pub ghosts: usize,
    #[serde(default = "default_ring")]
    pub ring_radius_m: f64,
    /// Defaults to the first vehicle flagged `is_attacker`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacker: Option<String>,
    #[serde(default)]
    pub stationary: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SybilParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.ghosts < 1 {
            return Err("ghosts must be >= 1".into());
        }
        if !(self.ring_radius_m > 0.0 && self.ring_radius_m.is_finite()) {
            return Err("ring_radius_m must be a positive finite number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbaParams {
    /// Per-axis bound of the uniform bias.
    pub delta_m: [f64; 3],
    #[serde(default)]
    pub targets: Vec<String>,
    /// Draw a fresh bias for every message instead of once per activation.
    #[serde(default)]
    pub redraw_per_message: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RbaParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.delta_m.iter().any(|d| !(*d >= 0.0 && d.is_finite())) {
            return Err("delta_m components must be non-negative and finite".into());
        }
        check_window(self.start_s, self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaaParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset_m: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fabricate_at: Option<[f64; 3]>,
    /// Plausibility bound the falsified position must exceed.
    #[serde(default = "default_rho")]
    pub rho_m: f64,
    #[serde(default)]
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
}

impl PaaParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.rho_m > 0.0 && self.rho_m.is_finite()) {
            return Err("rho_m must be a positive finite number".into());
        }
        match (self.offset_m, self.fabricate_at) {
            (Some(o), None) => {
                if !(norm(o) > self.rho_m) {
                    return Err(format!(
                        "offset_m norm {} does not exceed the plausibility bound {}",
                        norm(o),
                        self.rho_m
                    ));
                }
            }
            (None, Some(f)) => {
                if f.iter().any(|c| !c.is_finite()) {
                    return Err("fabricate_at must be finite".into());
                }
            }
            _ => return Err("exactly one of offset_m and fabricate_at is required".into()),
        }
        check_window(self.start_s, self.end_s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpsSpoofParams {
    pub bias_m: [f64; 3],
    #[serde(default)]
    pub start_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_s: Option<f64>,
}

impl GpsSpoofParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.bias_m.iter().any(|c| !c.is_finite()) {
            return Err("bias_m must be finite".into());
        }
        check_window(Some(self.start_s), self.end_s)
    }

    pub fn active(&self, t: f64) -> bool {
        in_window(t, Some(self.start_s), self.end_s)
    }
}

/// The pose the ego reports at `t`; the true state is never touched.
pub fn apply_gps_spoof(pose: &Pose, params: &GpsSpoofParams, t: f64) -> Pose {
    if params.active(t) {
        Pose {
            position: add(pose.position, params.bias_m),
            yaw: pose.yaw,
        }
    } else {
        *pose
    }
}

fn draw_bias(rng: &mut SimRng, delta: [f64; 3]) -> Point3 {
    delta.map(|d| if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 })
}

/// Random Bias Attack: a bounded uniform offset held per station for one
/// activation.
#[derive(Debug, Clone)]
pub struct RbaAttack {
    params: RbaParams,
    targets: Vec<String>,
    rng: SimRng,
    biases: BTreeMap<String, Point3>,
    active: bool,
}

impl RbaAttack {
    pub fn new(params: RbaParams, targets: Vec<String>, seed: u64) -> Self {
        let seed = params.seed.unwrap_or(seed);
        RbaAttack {
            params,
            targets,
            rng: seed::rng(seed),
            biases: BTreeMap::new(),
            active: false,
        }
    }

    pub fn bias(&self, station: &str) -> Option<Point3> {
        self.biases.get(station).copied()
    }

    pub fn apply(&mut self, cams: &[CamMessage], t: f64) -> Vec<CamMessage> {
        let now = in_window(t, self.params.start_s, self.params.end_s);
        if now && !self.active {
            self.biases.clear();
        }
        self.active = now;
        let mut out = cams.to_vec();
        if !now {
            return out;
        }
        for cam in out.iter_mut().filter(|c| self.targets.contains(&c.station_id)) {
            let bias = if self.params.redraw_per_message {
                draw_bias(&mut self.rng, self.params.delta_m)
            } else {
                match self.biases.get(&cam.station_id) {
                    Some(b) => *b,
                    None => {
                        let b = draw_bias(&mut self.rng, self.params.delta_m);
                        self.biases.insert(cam.station_id.clone(), b);
                        b
                    }
                }
            };
            cam.position = add(cam.position, bias);
        }
        out
    }
}

/// Position Altering Attack: a deliberate, implausibly large falsification.
#[derive(Debug, Clone)]
pub struct PaaAttack {
    params: PaaParams,
    targets: Vec<String>,
}

impl PaaAttack {
    pub fn new(params: PaaParams, targets: Vec<String>) -> Self {
        PaaAttack { params, targets }
    }

    /// A fabricated position within `rho_m` of the truth would not be a
    /// position-altering attack, so such messages pass unchanged.
    pub fn apply(&self, cams: &[CamMessage], t: f64) -> Vec<CamMessage> {
        let mut out = cams.to_vec();
        if !in_window(t, self.params.start_s, self.params.end_s) {
            return out;
        }
        for cam in out.iter_mut().filter(|c| self.targets.contains(&c.station_id)) {
            if let Some(o) = self.params.offset_m {
                cam.position = add(cam.position, o);
            } else if let Some(f) = self.params.fabricate_at {
                if norm(sub(f, cam.position)) > self.params.rho_m {
                    cam.position = f;
                }
            }
        }
        out
    }
}

/// Sybil attack: one attacker broadcasting on behalf of ghost stations placed
/// on a ring around it.
#[derive(Debug, Clone)]
pub struct SybilAttack {
    params: SybilParams,
    attacker: String,
    rng: SimRng,
    ghosts: Vec<Point3>,
    last_t: f64,
}

impl SybilAttack {
    pub fn new(params: SybilParams, attacker: String, seed: u64) -> Self {
        let seed = params.seed.unwrap_or(seed);
        SybilAttack {
            params,
            attacker,
            rng: seed::rng(seed),
            ghosts: Vec::new(),
            last_t: 0.0,
        }
    }

    pub fn ghost_id(&self, k: usize) -> String {
        format!("{GHOST_PREFIX}{}:{k}", self.attacker)
    }

    pub fn attacker(&self) -> &str {
        &self.attacker
    }

    pub fn apply(&mut self, cams: &[CamMessage], attacker: &VehicleState, t: f64) -> Vec<CamMessage> {
        let m = self.params.ghosts;
        if self.ghosts.is_empty() {
            let phase = self.rng.random_range(0.0..TAU);
            let r = self.params.ring_radius_m;
            self.ghosts = (0..m)
                .map(|k| {
                    let a = phase + TAU * k as f64 / m as f64;
                    add(attacker.position, [r * a.cos(), r * a.sin(), 0.0])
                })
                .collect();
        } else if !self.params.stationary {
            let dt = t - self.last_t;
            let v = attacker.velocity();
            for g in &mut self.ghosts {
                *g = add(*g, [v[0] * dt, v[1] * dt, 0.0]);
            }
        }
        self.last_t = t;
        let speed = if self.params.stationary { 0.0 } else { attacker.speed };
        let mut out = cams.to_vec();
        out.extend(self.ghosts.iter().enumerate().map(|(k, g)| CamMessage {
            station_id: self.ghost_id(k),
            generation_time_s: t,
            position: *g,
            speed,
            heading: normalize_angle(attacker.yaw),
        }));
        out
    }
}
