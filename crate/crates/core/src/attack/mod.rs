//! Perception-level attacks on point clouds and communication-level attacks
//! on CAM streams.

pub mod comm;
pub mod perception;

use thiserror::Error;

use crate::detector::Detector;
use crate::geometry::{BBox3D, Point3};
use crate::scenario::AttackSpec;
use crate::seed::{self, stream};

#[derive(Debug, Error, PartialEq)]
pub enum AttackError {
    #[error("invalid attack parameters: {0}")]
    InvalidParams(String),
    #[error("cannot attack an empty point cloud")]
    EmptyCloud,
    #[error("drop ratio {ratio} removes no points from a {points}-point cloud")]
    EmptyBudget { points: usize, ratio: f64 },
    #[error("cannot inject {k} points seeded from a {points}-point cloud")]
    TooFewPoints { points: usize, k: usize },
}

impl AttackError {
    /// The frame has nothing to attack (empty cloud, zero budget); callers
    /// pass it through unchanged.
    pub fn is_degenerate(&self) -> bool {
        !matches!(self, AttackError::InvalidParams(_))
    }
}

/// Perturbation budgets of the standard sweep, in meters.
pub const PERTURB_SWEEP: [f64; 6] = [0.005, 0.01, 0.03, 0.05, 0.07, 0.1];
/// Detachment drop ratios of the standard sweep.
pub const DETACH_SWEEP: [f64; 6] = [0.0005, 0.001, 0.003, 0.005, 0.01, 0.015];
/// Attachment budgets of the standard sweep, in meters.
pub const ATTACH_SWEEP: [f64; 6] = [0.05, 0.1, 0.3, 0.5, 0.7, 1.0];

/// Seed of the `index`-th configured attack at `tick`.
pub fn frame_seed(base: u64, index: usize, tick: u64) -> u64 {
    seed::derive(base, &[stream::PERCEPTION_ATTACK, index as u64, tick])
}

/// Run one perception attack on one frame. Communication attacks are
/// rejected as invalid.
pub fn attack_cloud<D: Detector + ?Sized>(
    model: &D,
    spec: &AttackSpec,
    cloud: &[Point3],
    gt: &[BBox3D],
    seed: u64,
) -> Result<Vec<Point3>, AttackError> {
    match spec {
        AttackSpec::Perturb(p) => {
            let params = perception::PerturbParams { seed: None, ..p.clone() };
            perception::perturb_attack(model, cloud, gt, &params, seed).map(|o| o.cloud)
        }
        AttackSpec::Detach(p) => perception::detach_attack(model, cloud, gt, p).map(|o| o.cloud),
        AttackSpec::Attach(p) => perception::attach_attack(model, cloud, gt, p).map(|o| o.cloud),
        other => Err(AttackError::InvalidParams(format!(
            "{} does not act on point clouds",
            other.name()
        ))),
    }
}

/// The swept quantity of a perception attack: the budget for perturb and
/// attach, the drop ratio for detach.
pub fn sweep_parameter(spec: &AttackSpec) -> Option<f64> {
    match spec {
        AttackSpec::Perturb(p) => Some(p.epsilon_m),
        AttackSpec::Detach(p) => Some(p.drop_ratio),
        AttackSpec::Attach(p) => Some(p.epsilon_m),
        _ => None,
    }
}

pub fn with_sweep_parameter(spec: &AttackSpec, value: f64) -> Option<AttackSpec> {
    let mut out = spec.clone();
    match &mut out {
        AttackSpec::Perturb(p) => p.epsilon_m = value,
        AttackSpec::Detach(p) => p.drop_ratio = value,
        AttackSpec::Attach(p) => p.epsilon_m = value,
        _ => return None,
    }
    Some(out)
}

pub fn default_sweep(attack: &str) -> Option<&'static [f64]> {
    match attack {
        "perturb" => Some(&PERTURB_SWEEP),
        "detach" => Some(&DETACH_SWEEP),
        "attach" => Some(&ATTACH_SWEEP),
        _ => None,
    }
}
