//! The three simulator roles. Each one owns its state outright and only
//! talks through [`TickMessage`]s.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::attack::comm::{
    apply_gps_spoof, emit_cams, update_ldm, CamMessage, GpsSpoofParams, LocalDynamicMap,
    PaaAttack, RbaAttack, SybilAttack,
};
use crate::exec::Exec;
use crate::scenario::{AttackSpec, CommSpec, ScenarioConfig, SensorSpec};
use crate::seed::{self, stream};
use crate::world::{ground_truth_boxes, raycast_lidar_with, sensor_pose, TrafficModel, VehicleState};

use super::protocol::{
    MessageKind, Payload, RoleName, RoleReport, SensedFrame, TickMessage, V2xBatch,
};

#[derive(Debug, Error, PartialEq)]
#[error("vehicle id sets differ: missing {missing:?}, extra {extra:?}")]
pub struct SyncError {
    /// Leader ids the follower lacks.
    pub missing: Vec<String>,
    /// Follower ids the leader lacks.
    pub extra: Vec<String>,
}

/// Overwrite the follower's kinematics (position, yaw, speed) with the
/// leader's, matched by id. Everything else of the follower is kept.
pub fn sync_states(
    leader: &[VehicleState],
    follower: &[VehicleState],
) -> Result<Vec<VehicleState>, SyncError> {
    let lead: BTreeSet<&str> = leader.iter().map(|s| s.id.as_str()).collect();
    let foll: BTreeSet<&str> = follower.iter().map(|s| s.id.as_str()).collect();
    if lead != foll {
        return Err(SyncError {
            missing: lead.difference(&foll).map(|s| s.to_string()).collect(),
            extra: foll.difference(&lead).map(|s| s.to_string()).collect(),
        });
    }
    Ok(follower
        .iter()
        .map(|f| {
            let l = leader.iter().find(|l| l.id == f.id).expect("id sets match");
            VehicleState {
                position: l.position,
                yaw: l.yaw,
                speed: l.speed,
                ..f.clone()
            }
        })
        .collect())
}

pub trait Role: Send {
    fn name(&self) -> RoleName;

    fn handle(&mut self, msg: TickMessage) -> Result<TickMessage, String>;
}

/// Per-role bookkeeping of the master clock as seen from inside the role.
#[derive(Debug, Clone, Default)]
struct Clock {
    steps: Vec<u64>,
}

impl Clock {
    fn step(&mut self, tick: u64) -> Result<(), String> {
        let expected = self.steps.len() as u64;
        if tick != expected {
            return Err(format!("STEP {tick} out of order, expected {expected}"));
        }
        self.steps.push(tick);
        Ok(())
    }

    fn same_tick(&self, tick: u64) -> Result<(), String> {
        match self.steps.last() {
            Some(&last) if last == tick => Ok(()),
            _ => Err(format!("message for tick {tick} before its STEP")),
        }
    }

    fn report(&self, role: RoleName, dt: f64) -> Payload {
        Payload::Report(RoleReport {
            role,
            steps: self.steps.clone(),
            sim_time_s: self.steps.len() as f64 * dt,
        })
    }
}

fn expect_states(msg: TickMessage) -> Result<Vec<VehicleState>, String> {
    match msg.payload {
        Payload::States(s) => Ok(s),
        other => Err(format!("STATE_SYNC without states: {other:?}")),
    }
}

fn unexpected(role: RoleName, kind: MessageKind) -> String {
    format!("{role} role cannot handle {kind:?}")
}

/// Kinematic traffic simulator.
pub struct TrafficRole {
    model: TrafficModel,
    states: Vec<VehicleState>,
    dt: f64,
    clock: Clock,
}

impl TrafficRole {
    pub fn new(config: &ScenarioConfig) -> Self {
        TrafficRole {
            model: TrafficModel::from_specs(&config.vehicles),
            states: TrafficModel::initial_states(&config.vehicles),
            dt: config.dt_s,
            clock: Clock::default(),
        }
    }
}

impl Role for TrafficRole {
    fn name(&self) -> RoleName {
        RoleName::Traffic
    }

    fn handle(&mut self, msg: TickMessage) -> Result<TickMessage, String> {
        let tick = msg.tick_index;
        match msg.kind {
            MessageKind::Step => {
                self.clock.step(tick)?;
                self.states = self.model.step(&self.states, self.dt);
                Ok(TickMessage::ack(tick, Payload::States(self.states.clone())))
            }
            MessageKind::StateSync => {
                self.clock.same_tick(tick)?;
                let leader = expect_states(msg)?;
                self.states = sync_states(&leader, &self.states).map_err(|e| e.to_string())?;
                Ok(TickMessage::ack(tick, Payload::States(self.states.clone())))
            }
            MessageKind::Shutdown => Ok(TickMessage::ack(tick, self.clock.report(self.name(), self.dt))),
            kind => Err(unexpected(self.name(), kind)),
        }
    }
}

/// Physical world: its own vehicle kinematics plus the ego LiDAR.
pub struct WorldRole {
    model: TrafficModel,
    states: Vec<VehicleState>,
    dt: f64,
    ego: String,
    sensor: Option<SensorSpec>,
    seed: u64,
    exec: Exec,
    leads: bool,
    clock: Clock,
}

impl WorldRole {
    pub fn new(config: &ScenarioConfig, leads: bool, exec: Exec) -> Self {
        WorldRole {
            model: TrafficModel::from_specs(&config.vehicles),
            states: TrafficModel::initial_states(&config.vehicles),
            dt: config.dt_s,
            ego: config.ego().id.clone(),
            sensor: config.lidar().cloned(),
            seed: config.seed,
            exec,
            leads,
            clock: Clock::default(),
        }
    }

    fn sense(&self, tick: u64) -> Result<SensedFrame, String> {
        let ego = self
            .states
            .iter()
            .find(|s| s.id == self.ego)
            .ok_or_else(|| format!("ego `{}` missing from world", self.ego))?;
        let others: Vec<VehicleState> =
            self.states.iter().filter(|s| s.id != self.ego).cloned().collect();
        let Some(sensor) = &self.sensor else {
            return Ok(SensedFrame {
                states: self.states.clone(),
                cloud: Vec::new(),
                gt: Vec::new(),
                sensor_pose: ego.pose(),
            });
        };
        let mut rng = seed::rng(seed::derive(self.seed, &[stream::LIDAR_NOISE, tick]));
        let scan = raycast_lidar_with(ego, &others, sensor, &mut rng, self.exec);
        Ok(SensedFrame {
            states: self.states.clone(),
            cloud: scan.cloud.points,
            gt: ground_truth_boxes(ego, &others, sensor),
            sensor_pose: sensor_pose(ego, sensor),
        })
    }
}

impl Role for WorldRole {
    fn name(&self) -> RoleName {
        RoleName::World
    }

    fn handle(&mut self, msg: TickMessage) -> Result<TickMessage, String> {
        let tick = msg.tick_index;
        match msg.kind {
            MessageKind::Step => {
                self.clock.step(tick)?;
                self.states = self.model.step(&self.states, self.dt);
                let payload = if self.leads {
                    Payload::Sensed(Box::new(self.sense(tick)?))
                } else {
                    Payload::Empty
                };
                Ok(TickMessage::ack(tick, payload))
            }
            MessageKind::StateSync => {
                self.clock.same_tick(tick)?;
                let leader = expect_states(msg)?;
                self.states = sync_states(&leader, &self.states).map_err(|e| e.to_string())?;
                Ok(TickMessage::ack(tick, Payload::Sensed(Box::new(self.sense(tick)?))))
            }
            MessageKind::Shutdown => Ok(TickMessage::ack(tick, self.clock.report(self.name(), self.dt))),
            kind => Err(unexpected(self.name(), kind)),
        }
    }
}

enum CommAttack {
    Gps(GpsSpoofParams),
    Rba(RbaAttack),
    Paa(PaaAttack),
    Sybil(SybilAttack),
}

/// CAM generation, communication attacks and per-vehicle LDMs.
pub struct V2xRole {
    comm: CommSpec,
    dt: f64,
    interval: u64,
    ego: String,
    members: Vec<String>,
    attacks: Vec<CommAttack>,
    clean_ldms: Vec<LocalDynamicMap>,
    ldms: Vec<LocalDynamicMap>,
    clock: Clock,
}

impl V2xRole {
    pub fn new(config: &ScenarioConfig) -> Self {
        let attackers: Vec<String> = config
            .vehicles
            .iter()
            .filter(|v| v.is_attacker)
            .map(|v| v.id.clone())
            .collect();
        let targets_or_attackers = |t: &[String]| {
            if t.is_empty() {
                attackers.clone()
            } else {
                t.to_vec()
            }
        };
        let attacks = config
            .attacks
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let seed = seed::derive(config.seed, &[stream::COMM_ATTACK, i as u64]);
                match a {
                    AttackSpec::GpsSpoof(p) => Some(CommAttack::Gps(p.clone())),
                    AttackSpec::Rba(p) => Some(CommAttack::Rba(RbaAttack::new(
                        p.clone(),
                        targets_or_attackers(&p.targets),
                        seed,
                    ))),
                    AttackSpec::Paa(p) => Some(CommAttack::Paa(PaaAttack::new(
                        p.clone(),
                        targets_or_attackers(&p.targets),
                    ))),
                    AttackSpec::Sybil(p) => {
                        let attacker = p.attacker.clone().or_else(|| attackers.first().cloned())?;
                        Some(CommAttack::Sybil(SybilAttack::new(p.clone(), attacker, seed)))
                    }
                    _ => None,
                }
            })
            .collect();
        let members: Vec<String> = config
            .vehicles
            .iter()
            .filter(|v| v.v2x)
            .map(|v| v.id.clone())
            .collect();
        let ldms: Vec<LocalDynamicMap> = members.iter().map(|m| LocalDynamicMap::new(m)).collect();
        V2xRole {
            comm: config.comm.clone(),
            dt: config.dt_s,
            interval: config.cam_interval_ticks(),
            ego: config.ego().id.clone(),
            members,
            attacks,
            clean_ldms: ldms.clone(),
            ldms,
            clock: Clock::default(),
        }
    }

    fn attack(&mut self, mut cams: Vec<CamMessage>, states: &[VehicleState], t: f64) -> Vec<CamMessage> {
        for attack in &mut self.attacks {
            cams = match attack {
                CommAttack::Gps(p) => {
                    if let Some(ego) = states.iter().find(|s| s.id == self.ego) {
                        let reported = apply_gps_spoof(&ego.pose(), p, t);
                        for c in cams.iter_mut().filter(|c| c.station_id == self.ego) {
                            c.position = reported.position;
                        }
                    }
                    cams
                }
                CommAttack::Rba(a) => a.apply(&cams, t),
                CommAttack::Paa(a) => a.apply(&cams, t),
                CommAttack::Sybil(a) => match states.iter().find(|s| s.id == a.attacker()) {
                    Some(attacker) => a.apply(&cams, attacker, t),
                    None => cams,
                },
            };
        }
        cams
    }

    fn exchange(&mut self, tick: u64, states: &[VehicleState]) -> V2xBatch {
        let t = tick as f64 * self.dt;
        let (clean, cams) = if self.comm.enabled && tick.is_multiple_of(self.interval) {
            let senders: Vec<VehicleState> = states
                .iter()
                .filter(|s| self.members.contains(&s.id))
                .cloned()
                .collect();
            let clean = emit_cams(&senders, t, &self.comm);
            let cams = self.attack(clean.clone(), states, t);
            (clean, cams)
        } else {
            (Vec::new(), Vec::new())
        };
        for (clean_ldm, ldm) in self.clean_ldms.iter_mut().zip(self.ldms.iter_mut()) {
            if let Some(owner) = states.iter().find(|s| s.id == ldm.owner_id) {
                update_ldm(clean_ldm, &clean, owner, &self.comm);
                update_ldm(ldm, &cams, owner, &self.comm);
            }
        }
        V2xBatch {
            clean_cams: clean,
            cams,
            clean_ldms: self.clean_ldms.clone(),
            ldms: self.ldms.clone(),
        }
    }
}

impl Role for V2xRole {
    fn name(&self) -> RoleName {
        RoleName::V2x
    }

    fn handle(&mut self, msg: TickMessage) -> Result<TickMessage, String> {
        let tick = msg.tick_index;
        match msg.kind {
            MessageKind::StateSync => {
                self.clock.step(tick)?;
                let states = expect_states(msg)?;
                Ok(TickMessage::cam_batch(tick, self.exchange(tick, &states)))
            }
            MessageKind::Shutdown => Ok(TickMessage::ack(tick, self.clock.report(self.name(), self.dt))),
            kind => Err(unexpected(self.name(), kind)),
        }
    }
}
