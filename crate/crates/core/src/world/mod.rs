//! Kinematic traffic and synthetic LiDAR: the stand-in for the physical world
//! and traffic simulators.

mod lidar;
mod route;

pub use lidar::{
    ground_truth_boxes, ray_box_entry, raycast_lidar, raycast_lidar_with, sensor_pose, HitKind,
    LidarScan,
};
pub use route::{Route, TrafficModel};

use serde::{Deserialize, Serialize};

use crate::geometry::{BBox3D, Point3, Pose};

/// Kinematic state of one vehicle, exchanged between the simulator roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: String,
    /// Map frame; z is half the vehicle height (wheels on the ground).
    pub position: Point3,
    pub yaw: f64,
    pub speed: f64,
    /// (length, width, height).
    pub dims: [f64; 3],
    /// Arc length travelled along the route.
    #[serde(default)]
    pub route_s: f64,
}

impl VehicleState {
    pub fn pose(&self) -> Pose {
        Pose {
            position: self.position,
            yaw: self.yaw,
        }
    }

    pub fn velocity(&self) -> Point3 {
        let (s, c) = self.yaw.sin_cos();
        [self.speed * c, self.speed * s, 0.0]
    }

    pub fn bbox(&self) -> BBox3D {
        BBox3D::new(self.position, self.dims, self.yaw)
    }
}
