//! Ready-made scenes and scenarios for tests, benches and examples.

use rand::Rng;

use crate::attack::perception::{AttachParams, DetachParams, PerturbParams};
use crate::detector::DetectorModel;
use crate::geometry::{BBox3D, Point3};
use crate::seed;
use crate::world::{ground_truth_boxes, raycast_lidar, VehicleState};

use super::{AttackSpec, CommSpec, MapSpec, ScenarioConfig, SensorSpec, SyncMode, VehicleSpec};

/// A sensor-frame cloud with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: Vec<Point3>,
    pub gt: Vec<BBox3D>,
}

/// Between `max_points / 2` and `max_points` points: most scattered in one to
/// three random boxes, the rest as clutter over the detector range. Every
/// point sits above the default ground gate.
pub fn random_scene(seed: u64, max_points: usize) -> (Vec<Point3>, Vec<BBox3D>) {
    let mut rng = seed::rng(seed);
    let boxes: Vec<BBox3D> = (0..rng.random_range(1..=3))
        .map(|_| {
            BBox3D::new(
                [rng.random_range(5.0..60.0), rng.random_range(-20.0..20.0), -0.6],
                [4.5, 1.8, 1.6],
                rng.random_range(-3.1..3.1),
            )
        })
        .collect();
    let n = rng.random_range(max_points.div_ceil(2)..=max_points.max(1));
    let points = (0..n)
        .map(|_| {
            if rng.random_bool(0.75) {
                let b = &boxes[rng.random_range(0..boxes.len())];
                let local = [
                    rng.random_range(-0.5..0.5) * b.dims[0],
                    rng.random_range(-0.5..0.5) * b.dims[1],
                    rng.random_range(-0.4..0.4) * b.dims[2],
                ];
                let (s, c) = b.yaw.sin_cos();
                [
                    b.center[0] + c * local[0] - s * local[1],
                    b.center[1] + s * local[0] + c * local[1],
                    b.center[2] + local[2],
                ]
            } else {
                [
                    rng.random_range(0.0..70.0),
                    rng.random_range(-40.0..40.0),
                    rng.random_range(-1.3..1.0),
                ]
            }
        })
        .collect();
    (points, boxes)
}

/// The LiDAR used by the desk and highway scenes: 32 channels, 512 points per
/// channel, 70 m range.
pub fn desk_sensor() -> SensorSpec {
    SensorSpec {
        channels: 32,
        points_per_channel: 512,
        range_m: 70.0,
        ..SensorSpec::default()
    }
}

fn parked(id: &str, x: f64, y: f64, yaw: f64) -> VehicleState {
    VehicleState {
        id: id.into(),
        position: [x, y, 0.8],
        yaw,
        speed: 0.0,
        dims: [4.5, 1.8, 1.6],
        route_s: 0.0,
    }
}

/// Ego at the origin facing +x and one car 15 m ahead, raycast with
/// [`desk_sensor`].
pub fn desk_scene(seed: u64) -> Scene {
    let ego = parked("ego", 0.0, 0.0, 0.0);
    let others = [parked("car", 15.0, 0.0, 0.0)];
    let sensor = desk_sensor();
    let mut rng = seed::rng(seed);
    Scene {
        cloud: raycast_lidar(&ego, &others, &sensor, &mut rng).points,
        gt: ground_truth_boxes(&ego, &others, &sensor),
    }
}

/// Detector tuned for [`desk_sensor`] sweeps: half-metre kernel on a 1 m
/// lattice, a lower firing threshold and tight suppression of neighbouring
/// duplicates.
pub fn highway_detector() -> DetectorModel {
    DetectorModel {
        cell_size_m: 1.0,
        bandwidth_m: 0.5,
        bias: -2.0,
        nms_iou: 0.1,
        ..DetectorModel::default()
    }
}

const LANES: [f64; 5] = [-7.0, -3.5, 0.0, 3.5, 7.0];

/// Straight multi-lane highway: the ego drives along +x and `cars` vehicles
/// start ahead of it in random lanes with speeds near its own.
pub fn highway_config(seed: u64, duration_s: f64, cars: usize) -> ScenarioConfig {
    let mut rng = seed::rng(seed::derive(seed, &[0xC0FF]));
    let end = 4000.0;
    let mut vehicles = vec![VehicleSpec {
        id: "ego".into(),
        route: vec![[0.0, 0.0], [end, 0.0]],
        speed_mps: 25.0,
        is_ego: true,
        ..VehicleSpec::default()
    }];
    for k in 0..cars {
        let lane = LANES[rng.random_range(0..LANES.len())];
        let x0 = rng.random_range(12.0..55.0);
        vehicles.push(VehicleSpec {
            id: format!("car{k}"),
            route: vec![[x0, lane], [end, lane]],
            speed_mps: rng.random_range(23.0..27.0),
            is_attacker: k == 0,
            ..VehicleSpec::default()
        });
    }
    ScenarioConfig {
        duration_s,
        dt_s: 0.1,
        mode: SyncMode::TrafficDriven,
        seed,
        map: MapSpec::default(),
        vehicles,
        sensors: vec![desk_sensor()],
        comm: CommSpec::default(),
        attacks: Vec::new(),
        output_dir: "out".into(),
        detector: highway_detector(),
    }
}

/// A small random but valid scenario: two to five vehicles, a coarse LiDAR,
/// either sync mode and a few dozen ticks at most.
pub fn random_config(seed: u64) -> ScenarioConfig {
    let mut rng = seed::rng(seed);
    let dt = [0.05, 0.1, 0.2][rng.random_range(0..3)];
    let ticks = rng.random_range(0..30u32);
    let n = rng.random_range(2..=5);
    let ego = rng.random_range(0..n);
    let vehicles = (0..n)
        .map(|k| {
            let start = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
            let heading: f64 = rng.random_range(-3.1..3.1);
            let len = rng.random_range(20.0..200.0);
            VehicleSpec {
                id: format!("v{k}"),
                route: vec![
                    start,
                    [start[0] + len * heading.cos(), start[1] + len * heading.sin()],
                ],
                speed_mps: rng.random_range(0.0..30.0),
                is_ego: k == ego,
                is_attacker: k != ego && k == (ego + 1) % n,
                loop_route: rng.random_bool(0.3),
                ..VehicleSpec::default()
            }
        })
        .collect();
    let mut attacks = Vec::new();
    if rng.random_bool(0.5) {
        attacks.push(AttackSpec::Perturb(PerturbParams {
            steps: 2,
            ..PerturbParams::new(0.05)
        }));
    }
    if rng.random_bool(0.3) {
        attacks.push(AttackSpec::Detach(DetachParams {
            iterations: 2,
            ..DetachParams::new(0.01)
        }));
    }
    if rng.random_bool(0.3) {
        attacks.push(AttackSpec::Attach(AttachParams {
            steps: 2,
            ..AttachParams::new(5, 0.2)
        }));
    }
    ScenarioConfig {
        duration_s: ticks as f64 * dt,
        dt_s: dt,
        mode: if rng.random_bool(0.5) {
            SyncMode::TrafficDriven
        } else {
            SyncMode::WorldDriven
        },
        seed,
        map: MapSpec::default(),
        vehicles,
        sensors: vec![SensorSpec {
            channels: 4,
            points_per_channel: 64,
            range_m: 60.0,
            ..SensorSpec::default()
        }],
        comm: CommSpec::default(),
        attacks,
        output_dir: "out".into(),
        detector: DetectorModel::default(),
    }
}
