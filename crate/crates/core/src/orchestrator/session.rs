use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};
use serde::Serialize;
use thiserror::Error;

use crate::attack::comm::apply_gps_spoof;
use crate::attack::{attack_cloud, frame_seed};
use crate::detector::DetectorModel;
use crate::exec::Exec;
use crate::geometry::{Point3, PointCloud, Pose};
use crate::scenario::{AttackSpec, ConfigError, FrameRecord, ScenarioConfig, SyncMode};
use crate::world::VehicleState;

use super::protocol::{
    decode, encode, MessageKind, Payload, RoleName, RoleReport, SensedFrame, TickMessage, V2xBatch,
};
use super::roles::{Role, TrafficRole, V2xRole, WorldRole};
use super::sink::{FrameSink, TickOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    /// Every role runs on the coordinator's thread.
    Inline,
    /// One thread per role; messages cross as encoded byte frames.
    Threaded,
}

#[derive(Debug, Clone, Copy)]
pub struct SessionOptions {
    pub execution: Execution,
    /// Wall-clock bound on each reply; only enforced for threaded roles.
    pub timeout: Duration,
    pub exec: Exec,
}

impl Default for SessionOptions {
    fn default() -> Self {
        SessionOptions {
            execution: Execution::Threaded,
            timeout: Duration::from_secs(10),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{role} role did not answer tick {tick} in time")]
    Timeout { role: RoleName, tick: u64 },
    #[error("{role} role failed at tick {tick}: {message}")]
    Role {
        role: RoleName,
        tick: u64,
        message: String,
    },
    #[error("{role} role crashed at tick {tick}")]
    Crashed { role: RoleName, tick: u64 },
    #[error("protocol violation by {role} at tick {tick}: {detail}")]
    Protocol {
        role: RoleName,
        tick: u64,
        detail: String,
    },
    #[error("leader and follower disagree after sync at tick {tick}: {detail}")]
    Desync { tick: u64, detail: String },
    #[error("sink failed at tick {tick}: {message}")]
    Sink { tick: u64, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionState {
    pub current_tick: u64,
    pub mode: SyncMode,
    pub registered_roles: BTreeSet<RoleName>,
    pub finished: bool,
}

/// One message crossing the barrier, as seen by the coordinator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub role: RoleName,
    pub kind: MessageKind,
    pub tick: u64,
    /// True for coordinator-to-role messages.
    pub outbound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub ticks: u64,
    pub frames: u64,
    pub mode: SyncMode,
    /// Frames (perception) or CAM ticks (communication) each attack touched.
    pub attacks_applied: BTreeMap<String, u64>,
    pub roles: Vec<RoleReport>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

enum Endpoint {
    Inline(Box<dyn Role>),
    Threaded {
        tx: Sender<Vec<u8>>,
        rx: Receiver<Result<Vec<u8>, String>>,
        handle: Option<JoinHandle<()>>,
    },
}

enum CallError {
    Timeout,
    Crashed,
    Role(String),
    Protocol(String),
}

impl Endpoint {
    fn spawn(mut role: Box<dyn Role>) -> Self {
        let (tx, role_rx) = mpsc::channel::<Vec<u8>>();
        let (role_tx, rx) = mpsc::channel();
        let name = role.name();
        let handle = thread::Builder::new()
            .name(format!("role-{name}"))
            .spawn(move || {
                while let Ok(bytes) = role_rx.recv() {
                    let reply = decode(&bytes)
                        .map_err(|e| e.to_string())
                        .and_then(|(msg, _)| {
                            let last = msg.kind == MessageKind::Shutdown;
                            role.handle(msg).map(|r| (r, last))
                        });
                    let (out, stop) = match reply {
                        Ok((r, last)) => (Ok(encode(&r)), last),
                        Err(e) => (Err(e), true),
                    };
                    if role_tx.send(out).is_err() || stop {
                        break;
                    }
                }
            })
            .expect("spawn role thread");
        Endpoint::Threaded {
            tx,
            rx,
            handle: Some(handle),
        }
    }

    fn call(&mut self, msg: TickMessage, timeout: Duration) -> Result<TickMessage, CallError> {
        match self {
            Endpoint::Inline(role) => role.handle(msg).map_err(CallError::Role),
            Endpoint::Threaded { tx, rx, .. } => {
                tx.send(encode(&msg)).map_err(|_| CallError::Crashed)?;
                match rx.recv_timeout(timeout) {
                    Ok(Ok(bytes)) => decode(&bytes)
                        .map(|(m, _)| m)
                        .map_err(|e| CallError::Protocol(e.to_string())),
                    Ok(Err(e)) => Err(CallError::Role(e)),
                    Err(RecvTimeoutError::Timeout) => Err(CallError::Timeout),
                    Err(RecvTimeoutError::Disconnected) => Err(CallError::Crashed),
                }
            }
        }
    }

    /// Join a finished role thread. A role that is still busy is left
    /// detached rather than blocking the caller.
    fn close(&mut self) {
        if let Endpoint::Threaded { handle, .. } = self {
            if let Some(h) = handle.take() {
                if h.is_finished() {
                    let _ = h.join();
                }
            }
        }
    }
}

/// Coordinator holding the master clock.
pub struct Session {
    config: ScenarioConfig,
    options: SessionOptions,
    model: DetectorModel,
    traffic: Endpoint,
    world: Endpoint,
    v2x: Endpoint,
    state: SessionState,
    trace: Vec<TraceEvent>,
    applied: BTreeMap<String, u64>,
}

impl Session {
    /// Validate `config` and launch the standard roles.
    pub fn new(config: ScenarioConfig, options: SessionOptions) -> Result<Self, SessionError> {
        config.validate()?;
        let leads = config.mode == SyncMode::WorldDriven;
        let traffic = Box::new(TrafficRole::new(&config));
        let world = Box::new(WorldRole::new(&config, leads, options.exec));
        let v2x = Box::new(V2xRole::new(&config));
        Ok(Self::with_roles(config, options, traffic, world, v2x))
    }

    /// Launch a session around caller-supplied roles.
    pub fn with_roles(
        config: ScenarioConfig,
        options: SessionOptions,
        traffic: Box<dyn Role>,
        world: Box<dyn Role>,
        v2x: Box<dyn Role>,
    ) -> Self {
        let registered_roles = [traffic.name(), world.name(), v2x.name()].into_iter().collect();
        let launch = |r: Box<dyn Role>| match options.execution {
            Execution::Inline => Endpoint::Inline(r),
            Execution::Threaded => Endpoint::spawn(r),
        };
        Session {
            model: config.detector.clone().with_exec(options.exec),
            state: SessionState {
                current_tick: 0,
                mode: config.mode,
                registered_roles,
                finished: false,
            },
            traffic: launch(traffic),
            world: launch(world),
            v2x: launch(v2x),
            config,
            options,
            trace: Vec::new(),
            applied: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    fn endpoint(&mut self, role: RoleName) -> &mut Endpoint {
        match role {
            RoleName::Traffic => &mut self.traffic,
            RoleName::World => &mut self.world,
            RoleName::V2x => &mut self.v2x,
        }
    }

    /// Send one message and wait for the reply of the same tick.
    fn call(&mut self, role: RoleName, msg: TickMessage, reply: MessageKind) -> Result<Payload, SessionError> {
        let tick = msg.tick_index;
        self.trace.push(TraceEvent {
            role,
            kind: msg.kind,
            tick,
            outbound: true,
        });
        let timeout = self.options.timeout;
        let answer = self.endpoint(role).call(msg, timeout).map_err(|e| match e {
            CallError::Timeout => SessionError::Timeout { role, tick },
            CallError::Crashed => SessionError::Crashed { role, tick },
            CallError::Role(message) => SessionError::Role { role, tick, message },
            CallError::Protocol(detail) => SessionError::Protocol { role, tick, detail },
        })?;
        self.trace.push(TraceEvent {
            role,
            kind: answer.kind,
            tick: answer.tick_index,
            outbound: false,
        });
        if answer.kind != reply || answer.tick_index != tick {
            return Err(SessionError::Protocol {
                role,
                tick,
                detail: format!(
                    "expected {reply:?} for tick {tick}, got {:?} for tick {}",
                    answer.kind, answer.tick_index
                ),
            });
        }
        Ok(answer.payload)
    }

    fn states_of(role: RoleName, tick: u64, payload: Payload) -> Result<Vec<VehicleState>, SessionError> {
        match payload {
            Payload::States(s) => Ok(s),
            other => Err(SessionError::Protocol {
                role,
                tick,
                detail: format!("expected states, got {other:?}"),
            }),
        }
    }

    fn sensed_of(tick: u64, payload: Payload) -> Result<SensedFrame, SessionError> {
        match payload {
            Payload::Sensed(s) => Ok(*s),
            other => Err(SessionError::Protocol {
                role: RoleName::World,
                tick,
                detail: format!("expected a sensed frame, got {other:?}"),
            }),
        }
    }

    fn check_sync(tick: u64, leader: &[VehicleState], follower: &[VehicleState]) -> Result<(), SessionError> {
        let same = leader.len() == follower.len()
            && leader.iter().zip(follower).all(|(l, f)| {
                l.id == f.id && l.position == f.position && l.yaw == f.yaw && l.speed == f.speed
            });
        if same {
            Ok(())
        } else {
            Err(SessionError::Desync {
                tick,
                detail: "follower states differ from leader".into(),
            })
        }
    }

    /// STEP, leader/follower sync and CAM exchange for one tick.
    fn exchange(&mut self, tick: u64) -> Result<(SensedFrame, V2xBatch), SessionError> {
        let sensed = match self.config.mode {
            SyncMode::TrafficDriven => {
                let p = self.call(RoleName::Traffic, TickMessage::step(tick), MessageKind::Ack)?;
                let leader = Self::states_of(RoleName::Traffic, tick, p)?;
                self.call(RoleName::World, TickMessage::step(tick), MessageKind::Ack)?;
                let p = self.call(
                    RoleName::World,
                    TickMessage::state_sync(tick, leader.clone()),
                    MessageKind::Ack,
                )?;
                let sensed = Self::sensed_of(tick, p)?;
                Self::check_sync(tick, &leader, &sensed.states)?;
                sensed
            }
            SyncMode::WorldDriven => {
                let p = self.call(RoleName::World, TickMessage::step(tick), MessageKind::Ack)?;
                let sensed = Self::sensed_of(tick, p)?;
                self.call(RoleName::Traffic, TickMessage::step(tick), MessageKind::Ack)?;
                let p = self.call(
                    RoleName::Traffic,
                    TickMessage::state_sync(tick, sensed.states.clone()),
                    MessageKind::Ack,
                )?;
                let follower = Self::states_of(RoleName::Traffic, tick, p)?;
                Self::check_sync(tick, &sensed.states, &follower)?;
                sensed
            }
        };
        let p = self.call(
            RoleName::V2x,
            TickMessage::state_sync(tick, sensed.states.clone()),
            MessageKind::CamBatch,
        )?;
        let batch = match p {
            Payload::Cams(b) => *b,
            other => {
                return Err(SessionError::Protocol {
                    role: RoleName::V2x,
                    tick,
                    detail: format!("expected a CAM batch, got {other:?}"),
                })
            }
        };
        Ok((sensed, batch))
    }

    fn count(&mut self, name: &str) {
        *self.applied.entry(name.to_string()).or_default() += 1;
    }

    fn attacked_cloud(&mut self, tick: u64, sensed: &SensedFrame) -> Vec<Point3> {
        let mut cloud = sensed.cloud.clone();
        let attacks: Vec<(usize, AttackSpec)> = self
            .config
            .attacks
            .iter()
            .cloned()
            .enumerate()
            .filter(|(_, a)| a.is_perception())
            .collect();
        for (i, attack) in attacks {
            // A fixed user seed still varies per tick.
            let base = match &attack {
                AttackSpec::Perturb(p) => p.seed.unwrap_or(self.config.seed),
                _ => self.config.seed,
            };
            let result = attack_cloud(&self.model, &attack, &cloud, &sensed.gt, frame_seed(base, i, tick));
            match result {
                Ok(c) => {
                    cloud = c;
                    self.count(attack.name());
                }
                Err(e) => warn!("tick {tick}: {} skipped: {e}", attack.name()),
            }
        }
        cloud
    }

    fn reported_pose(&self, pose: &Pose, t: f64) -> Pose {
        self.config.attacks.iter().fold(*pose, |p, a| match a {
            AttackSpec::GpsSpoof(g) => apply_gps_spoof(&p, g, t),
            _ => p,
        })
    }

    fn assemble(&mut self, tick: u64, sensed: SensedFrame, batch: V2xBatch) -> TickOutput {
        let t = tick as f64 * self.config.dt_s;
        let adversarial = self.config.has_attacks().then(|| {
            if !batch.cams.is_empty() {
                let comm: Vec<&'static str> = self
                    .config
                    .attacks
                    .iter()
                    .filter(|a| !a.is_perception())
                    .map(|a| a.name())
                    .collect();
                for name in comm {
                    self.count(name);
                }
            }
            let cloud = self.attacked_cloud(tick, &sensed);
            FrameRecord {
                tick_index: tick,
                sim_time_s: t,
                point_cloud: PointCloud::new(cloud),
                gt_boxes: sensed.gt.clone(),
                vehicle_states: sensed.states.clone(),
                cams_emitted: batch.cams.clone(),
                ldms: batch.ldms.clone(),
                ego_to_world: self.reported_pose(&sensed.sensor_pose, t).to_matrix(),
            }
        });
        let clean = FrameRecord {
            tick_index: tick,
            sim_time_s: t,
            ego_to_world: sensed.sensor_pose.to_matrix(),
            point_cloud: PointCloud::new(sensed.cloud),
            gt_boxes: sensed.gt,
            vehicle_states: sensed.states,
            cams_emitted: batch.clean_cams,
            ldms: batch.clean_ldms,
        };
        TickOutput { clean, adversarial }
    }

    /// Run every tick, feeding each frame to all sinks, then shut the roles
    /// down.
    pub fn run(mut self, sinks: &mut [&mut dyn FrameSink]) -> Result<SessionSummary, SessionError> {
        let result = self.run_ticks(sinks);
        let ticks = self.config.tick_count();
        let roles = if result.is_ok() { self.shutdown(ticks) } else { Ok(Vec::new()) };
        for role in [RoleName::Traffic, RoleName::World, RoleName::V2x] {
            self.endpoint(role).close();
        }
        let frames = result?;
        Ok(SessionSummary {
            ticks,
            frames,
            mode: self.config.mode,
            attacks_applied: std::mem::take(&mut self.applied),
            roles: roles?,
            trace: std::mem::take(&mut self.trace),
        })
    }

    fn run_ticks(&mut self, sinks: &mut [&mut dyn FrameSink]) -> Result<u64, SessionError> {
        let total = self.config.tick_count();
        debug_assert_eq!(self.state.registered_roles.len(), 3);
        let mut frames = 0;
        for tick in 0..total {
            self.state.current_tick = tick;
            let (sensed, batch) = self.exchange(tick)?;
            let output = self.assemble(tick, sensed, batch);
            for sink in sinks.iter_mut() {
                sink.consume(&output).map_err(|e| SessionError::Sink {
                    tick,
                    message: e.to_string(),
                })?;
            }
            frames += 1;
            debug!("tick {tick} done");
        }
        self.state.current_tick = total;
        Ok(frames)
    }

    fn shutdown(&mut self, tick: u64) -> Result<Vec<RoleReport>, SessionError> {
        let mut reports = Vec::new();
        for role in [RoleName::Traffic, RoleName::World, RoleName::V2x] {
            match self.call(role, TickMessage::shutdown(tick), MessageKind::Ack)? {
                Payload::Report(r) => reports.push(r),
                other => {
                    return Err(SessionError::Protocol {
                        role,
                        tick,
                        detail: format!("expected a report, got {other:?}"),
                    })
                }
            }
        }
        self.state.finished = true;
        Ok(reports)
    }
}

/// Run `config` with default options.
pub fn run_session(
    config: &ScenarioConfig,
    sinks: &mut [&mut dyn FrameSink],
) -> Result<SessionSummary, SessionError> {
    run_session_with(config, sinks, SessionOptions::default())
}

pub fn run_session_with(
    config: &ScenarioConfig,
    sinks: &mut [&mut dyn FrameSink],
    options: SessionOptions,
) -> Result<SessionSummary, SessionError> {
    Session::new(config.clone(), options)?.run(sinks)
}
