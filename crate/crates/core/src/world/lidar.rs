use rand_distr::{Distribution, Normal};

use crate::exec::Exec;
use crate::geometry::{add, dist2, rotate_z, scale, BBox3D, Point3, PointCloud, Pose};
use crate::scenario::SensorSpec;
use crate::seed::SimRng;

use super::VehicleState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HitKind {
    Ground,
    /// Index into the `others` slice passed to the raycaster.
    Vehicle(usize),
}

/// A sweep plus the surface each point came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarScan {
    pub cloud: PointCloud,
    pub hits: Vec<HitKind>,
}

/// Sensor pose in the map frame: ego center plus the yaw-rotated mount offset.
pub fn sensor_pose(ego: &VehicleState, sensor: &SensorSpec) -> Pose {
    Pose {
        position: add(ego.position, rotate_z(sensor.mount_offset, ego.yaw)),
        yaw: ego.yaw,
    }
}

/// Entry distance of a ray into an oriented box (slab test in the box frame).
/// Rays starting inside the box report no hit.
pub fn ray_box_entry(origin: Point3, dir: Point3, bbox: &BBox3D) -> Option<f64> {
    let o = bbox.to_local(origin);
    let d = rotate_z(dir, -bbox.yaw);
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    for k in 0..3 {
        let half = bbox.dims[k] / 2.0;
        if d[k] == 0.0 {
            if o[k].abs() > half {
                return None;
            }
            continue;
        }
        let a = (-half - o[k]) / d[k];
        let b = (half - o[k]) / d[k];
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        t_near = t_near.max(lo);
        t_far = t_far.min(hi);
        if t_near > t_far {
            return None;
        }
    }
    (t_near >= 0.0).then_some(t_near)
}

fn ray_directions(sensor: &SensorSpec) -> Vec<Point3> {
    let channels = sensor.channels as usize;
    let per_channel = sensor.points_per_channel as usize;
    let [lo, hi] = sensor.vertical_fov;
    let mut dirs = Vec::with_capacity(channels * per_channel);
    for c in 0..channels {
        let elev_deg = if channels == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * c as f64 / (channels - 1) as f64
        };
        let (se, ce) = elev_deg.to_radians().sin_cos();
        for a in 0..per_channel {
            let az = 2.0 * std::f64::consts::PI * a as f64 / per_channel as f64;
            let (sa, ca) = az.sin_cos();
            dirs.push([ce * ca, ce * sa, se]);
        }
    }
    dirs
}

/// Boxes of the other vehicles expressed in the sensor frame.
fn boxes_in_sensor_frame(pose: &Pose, others: &[VehicleState]) -> Vec<BBox3D> {
    others
        .iter()
        .map(|v| BBox3D::new(pose.to_local(v.position), v.dims, v.yaw - pose.yaw))
        .collect()
}

/// Synthetic sweep with the default execution policy.
pub fn raycast_lidar(
    ego: &VehicleState,
    others: &[VehicleState],
    sensor: &SensorSpec,
    rng: &mut SimRng,
) -> PointCloud {
    raycast_lidar_with(ego, others, sensor, rng, Exec::default()).cloud
}

/// Cast `channels x points_per_channel` rays from the sensor and keep the
/// nearest hit per ray among the other vehicles' boxes and the ground plane.
///
/// Points come out channel-major, azimuth-minor, in the sensor frame. Range
/// noise is Gaussian truncated at 3 sigma. The rng only feeds that noise (one
/// draw per ray, in ray order), so the sweep is identical under every
/// execution policy.
pub fn raycast_lidar_with(
    ego: &VehicleState,
    others: &[VehicleState],
    sensor: &SensorSpec,
    rng: &mut SimRng,
    exec: Exec,
) -> LidarScan {
    let pose = sensor_pose(ego, sensor);
    let boxes = boxes_in_sensor_frame(&pose, others);
    let ground_z = -pose.position[2];
    let dirs = ray_directions(sensor);
    let noise: Vec<f64> = if sensor.noise_sigma_m > 0.0 {
        let sigma = sensor.noise_sigma_m;
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        (0..dirs.len())
            .map(|_| normal.sample(rng).clamp(-3.0 * sigma, 3.0 * sigma))
            .collect()
    } else {
        Vec::new()
    };
    let range = sensor.range_m;

    let hits = exec.map_range(dirs.len(), |i| {
        let d = dirs[i];
        let mut best: Option<(f64, HitKind)> = None;
        if d[2] < 0.0 {
            let t = ground_z / d[2];
            if t <= range {
                best = Some((t, HitKind::Ground));
            }
        }
        for (j, b) in boxes.iter().enumerate() {
            if let Some(t) = ray_box_entry([0.0; 3], d, b) {
                if t <= range && best.is_none_or(|(bt, _)| t < bt) {
                    best = Some((t, HitKind::Vehicle(j)));
                }
            }
        }
        best.map(|(t, kind)| {
            let r = (t + noise.get(i).copied().unwrap_or(0.0)).max(0.0);
            (scale(d, r), kind)
        })
    });

    let (points, kinds): (Vec<Point3>, Vec<HitKind>) = hits.into_iter().flatten().unzip();
    LidarScan {
        cloud: PointCloud::new(points),
        hits: kinds,
    }
}

/// One sensor-frame box per other vehicle whose center lies within the
/// sensor range. Yaw is relative to the ego heading.
pub fn ground_truth_boxes(
    ego: &VehicleState,
    others: &[VehicleState],
    sensor: &SensorSpec,
) -> Vec<BBox3D> {
    let pose = sensor_pose(ego, sensor);
    boxes_in_sensor_frame(&pose, others)
        .into_iter()
        .filter(|b| dist2(b.center, [0.0; 3]) <= sensor.range_m * sensor.range_m)
        .collect()
}
