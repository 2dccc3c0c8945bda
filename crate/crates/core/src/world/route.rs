use std::collections::BTreeMap;

use crate::geometry::normalize_angle;
use crate::scenario::VehicleSpec;

use super::VehicleState;

/// Polyline route with cumulative arc lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    waypoints: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    looped: bool,
}

impl Route {
    /// A looped route is closed back to its first waypoint.
    pub fn new(mut waypoints: Vec<[f64; 2]>, looped: bool) -> Self {
        if looped && waypoints.len() >= 2 && waypoints.first() != waypoints.last() {
            waypoints.push(waypoints[0]);
        }
        let mut cumulative = Vec::with_capacity(waypoints.len());
        let mut acc = 0.0;
        for (i, w) in waypoints.iter().enumerate() {
            if i > 0 {
                let p = waypoints[i - 1];
                acc += ((w[0] - p[0]).powi(2) + (w[1] - p[1]).powi(2)).sqrt();
            }
            cumulative.push(acc);
        }
        Self {
            waypoints,
            cumulative,
            looped,
        }
    }

    pub fn length(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn is_looped(&self) -> bool {
        self.looped
    }

    /// Position and segment heading at arc length `s` (clamped to the route).
    /// `None` for a degenerate (zero-length) route.
    pub fn sample(&self, s: f64) -> Option<([f64; 2], f64)> {
        let total = self.length();
        if self.waypoints.len() < 2 || total <= 0.0 {
            return None;
        }
        let s = s.clamp(0.0, total);
        // Segment i spans cumulative[i]..cumulative[i+1]; a point on a boundary
        // belongs to the following segment except at the very end.
        let last_seg = self.waypoints.len() - 2;
        let mut seg = self.cumulative.partition_point(|&c| c <= s).saturating_sub(1);
        seg = seg.min(last_seg);
        let heading = self.heading_at_or_before(seg)?;
        let (a, b) = (self.waypoints[seg], self.waypoints[seg + 1]);
        let len = self.cumulative[seg + 1] - self.cumulative[seg];
        let f = if len > 0.0 {
            (s - self.cumulative[seg]) / len
        } else {
            0.0
        };
        Some(([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], heading))
    }

    fn heading_at_or_before(&self, seg: usize) -> Option<f64> {
        let nonzero = |i: usize| {
            let (a, b) = (self.waypoints[i], self.waypoints[i + 1]);
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            (dx != 0.0 || dy != 0.0).then(|| normalize_angle(dy.atan2(dx)))
        };
        (0..=seg)
            .rev()
            .find_map(nonzero)
            .or_else(|| (seg + 1..self.waypoints.len() - 1).find_map(nonzero))
    }
}

/// Constant-speed polyline follower for every vehicle of a scenario.
#[derive(Debug, Clone, Default)]
pub struct TrafficModel {
    routes: BTreeMap<String, Route>,
}

impl TrafficModel {
    pub fn from_specs(specs: &[VehicleSpec]) -> Self {
        let routes = specs
            .iter()
            .map(|v| (v.id.clone(), Route::new(v.route.clone(), v.loop_route)))
            .collect();
        Self { routes }
    }

    pub fn route(&self, id: &str) -> Option<&Route> {
        self.routes.get(id)
    }

    /// States at the start of every route, in spec order.
    pub fn initial_states(specs: &[VehicleSpec]) -> Vec<VehicleState> {
        specs
            .iter()
            .map(|v| {
                let route = Route::new(v.route.clone(), v.loop_route);
                let (xy, yaw) = route
                    .sample(0.0)
                    .unwrap_or((v.route.first().copied().unwrap_or([0.0, 0.0]), 0.0));
                VehicleState {
                    id: v.id.clone(),
                    position: [xy[0], xy[1], v.height / 2.0],
                    yaw,
                    speed: v.speed_mps,
                    dims: [v.length, v.width, v.height],
                    route_s: 0.0,
                }
            })
            .collect()
    }

    /// Advance every vehicle `speed * dt` along its route. Vehicles reaching the
    /// end of an open route stop there with zero speed; looped routes wrap.
    pub fn step(&self, states: &[VehicleState], dt: f64) -> Vec<VehicleState> {
        states.iter().map(|s| self.step_one(s, dt)).collect()
    }

    fn step_one(&self, state: &VehicleState, dt: f64) -> VehicleState {
        let mut next = state.clone();
        let Some(route) = self.routes.get(&state.id) else {
            return next;
        };
        let total = route.length();
        if state.speed == 0.0 || total <= 0.0 {
            return next;
        }
        let mut s = state.route_s + state.speed * dt;
        if route.is_looped() {
            s = s.rem_euclid(total);
        } else if s >= total {
            s = total;
            next.speed = 0.0;
        }
        if let Some((xy, yaw)) = route.sample(s) {
            next.position = [xy[0], xy[1], state.position[2]];
            next.yaw = yaw;
        }
        next.route_s = s;
        next
    }
}
