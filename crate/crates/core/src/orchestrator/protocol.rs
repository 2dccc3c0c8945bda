//! The tick protocol spoken between the coordinator and the roles.
//!
//! On a byte stream every message is a little-endian `u32` length followed by
//! that many bytes of JSON with the fields `kind`, `tick_index`, `payload` in
//! that order.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::comm::{CamMessage, LocalDynamicMap};
use crate::geometry::{BBox3D, Point3, Pose};
use crate::world::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    Traffic,
    World,
    V2x,
}

impl std::fmt::Display for RoleName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RoleName::Traffic => "traffic",
            RoleName::World => "world",
            RoleName::V2x => "v2x",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Step,
    StateSync,
    CamBatch,
    Ack,
    Shutdown,
}

/// What the world role observed after a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensedFrame {
    pub states: Vec<VehicleState>,
    /// Sensor frame.
    pub cloud: Vec<Point3>,
    pub gt: Vec<BBox3D>,
    pub sensor_pose: Pose,
}

/// CAM traffic of one tick, with and without communication attacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2xBatch {
    pub clean_cams: Vec<CamMessage>,
    pub cams: Vec<CamMessage>,
    pub clean_ldms: Vec<LocalDynamicMap>,
    pub ldms: Vec<LocalDynamicMap>,
}

/// Returned by every role when it shuts down.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleReport {
    pub role: RoleName,
    /// Tick indices of every STEP the role processed, in order.
    pub steps: Vec<u64>,
    pub sim_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", content = "data", rename_all = "snake_case")]
pub enum Payload {
    Empty,
    States(Vec<VehicleState>),
    Sensed(Box<SensedFrame>),
    Cams(Box<V2xBatch>),
    Report(RoleReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickMessage {
    pub kind: MessageKind,
    pub tick_index: u64,
    pub payload: Payload,
}

impl TickMessage {
    pub fn step(tick: u64) -> Self {
        TickMessage {
            kind: MessageKind::Step,
            tick_index: tick,
            payload: Payload::Empty,
        }
    }

    pub fn state_sync(tick: u64, states: Vec<VehicleState>) -> Self {
        TickMessage {
            kind: MessageKind::StateSync,
            tick_index: tick,
            payload: Payload::States(states),
        }
    }

    pub fn ack(tick: u64, payload: Payload) -> Self {
        TickMessage {
            kind: MessageKind::Ack,
            tick_index: tick,
            payload,
        }
    }

    pub fn cam_batch(tick: u64, batch: V2xBatch) -> Self {
        TickMessage {
            kind: MessageKind::CamBatch,
            tick_index: tick,
            payload: Payload::Cams(Box::new(batch)),
        }
    }

    pub fn shutdown(tick: u64) -> Self {
        TickMessage {
            kind: MessageKind::Shutdown,
            tick_index: tick,
            payload: Payload::Empty,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("malformed message: {0}")]
    Malformed(String),
}

const HEADER: usize = 4;

pub fn encode(msg: &TickMessage) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("tick messages serialize");
    let len = u32::try_from(body.len()).expect("message under 4 GiB");
    let mut out = Vec::with_capacity(HEADER + body.len());
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&body);
    out
}

/// Decode one frame from the front of `buf`; returns the message and the
/// number of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(TickMessage, usize), ProtocolError> {
    if buf.len() < HEADER {
        return Err(ProtocolError::Truncated {
            needed: HEADER,
            have: buf.len(),
        });
    }
    let len = u32::from_le_bytes(buf[..HEADER].try_into().expect("4 bytes")) as usize;
    let end = HEADER + len;
    if buf.len() < end {
        return Err(ProtocolError::Truncated {
            needed: end,
            have: buf.len(),
        });
    }
    let msg = serde_json::from_slice(&buf[HEADER..end])
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    Ok((msg, end))
}
