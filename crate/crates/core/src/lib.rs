//! Co-simulation of autonomous-vehicle scenes under adversarial conditions.
//!
//! A single JSON scenario drives three lockstep simulator roles (traffic, world,
//! V2X). Each tick yields a [`scenario::FrameRecord`] holding a synthetic LiDAR
//! sweep, ground-truth boxes and the CAM traffic of the tick. Perception attacks
//! (perturbation, detachment, attachment) run against a differentiable surrogate
//! detector; communication attacks (Sybil, random bias, position altering, GPS
//! spoofing) rewrite CAM streams. [`metrics`] scores the damage with the mAP
//! ratio and the Chamfer distance.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod detector;
pub mod exec;
pub mod geometry;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod scenario;
pub mod seed;
pub mod world;

pub use detector::{Detection, Detector, DetectorModel, SaliencyMap};
pub use exec::Exec;
pub use geometry::{BBox3D, ObjectClass, Point3, PointCloud};
pub use scenario::{FrameRecord, ScenarioConfig};
pub use world::VehicleState;
