//! Shared geometric types: points, clouds, boxes, rigid poses.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

pub type Point3 = [f64; 3];

#[inline]
pub fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Point3, s: f64) -> Point3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Wrap an angle into (-pi, pi].
pub fn normalize_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Rotate a vector about +z.
#[inline]
pub fn rotate_z(v: Point3, yaw: f64) -> Point3 {
    let (s, c) = yaw.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
}

/// An ordered LiDAR sweep in the sensor frame.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|c| c.is_finite())
    }
}

impl From<Vec<Point3>> for PointCloud {
    fn from(points: Vec<Point3>) -> Self {
        Self { points }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectClass {
    #[default]
    Car,
}

/// Oriented 3D box: center, (length, width, height), yaw about +z, class.
///
/// Serialized as the flat 8-tuple `[x, y, z, l, w, h, r, class]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "BoxTuple", into = "BoxTuple")]
pub struct BBox3D {
    pub center: Point3,
    pub dims: [f64; 3],
    pub yaw: f64,
    pub class: ObjectClass,
}

type BoxTuple = (f64, f64, f64, f64, f64, f64, f64, ObjectClass);

impl From<BoxTuple> for BBox3D {
    fn from(t: BoxTuple) -> Self {
        BBox3D {
            center: [t.0, t.1, t.2],
            dims: [t.3, t.4, t.5],
            yaw: t.6,
            class: t.7,
        }
    }
}

impl From<BBox3D> for BoxTuple {
    fn from(b: BBox3D) -> Self {
        (
            b.center[0], b.center[1], b.center[2], b.dims[0], b.dims[1], b.dims[2], b.yaw, b.class,
        )
    }
}

impl BBox3D {
    pub fn new(center: Point3, dims: [f64; 3], yaw: f64) -> Self {
        Self {
            center,
            dims,
            yaw: normalize_angle(yaw),
            class: ObjectClass::Car,
        }
    }

    /// BEV footprint corners, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.dims[0] / 2.0, self.dims[1] / 2.0);
        let (s, c) = self.yaw.sin_cos();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[x, y]| [self.center[0] + c * x - s * y, self.center[1] + s * x + c * y])
    }

    /// Express a map-frame point in the box frame (origin at the center, x along yaw).
    pub fn to_local(&self, p: Point3) -> Point3 {
        rotate_z(sub(p, self.center), -self.yaw)
    }

    pub fn contains_bev(&self, x: f64, y: f64) -> bool {
        let l = self.to_local([x, y, self.center[2]]);
        l[0].abs() <= self.dims[0] / 2.0 && l[1].abs() <= self.dims[1] / 2.0
    }

    /// Point containment with every half-extent grown by `margin`.
    pub fn contains_inflated(&self, p: Point3, margin: f64) -> bool {
        let l = self.to_local(p);
        (0..3).all(|k| l[k].abs() <= self.dims[k] / 2.0 + margin)
    }

    /// Distance from a point to the box surface (zero on the surface).
    pub fn surface_distance(&self, p: Point3) -> f64 {
        let l = self.to_local(p);
        let q: Vec<f64> = (0..3).map(|k| l[k].abs() - self.dims[k] / 2.0).collect();
        let outside = q.iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let inside = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(0.0);
        outside + inside.abs()
    }
}

/// Planar rigid pose in the map frame (roll and pitch are always zero).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Point3,
    pub yaw: f64,
}

impl Pose {
    /// Row-major homogeneous transform taking local coordinates to the map frame.
    pub fn to_matrix(&self) -> [f64; 16] {
        let (s, c) = self.yaw.sin_cos();
        let [x, y, z] = self.position;
        [
            c, -s, 0.0, x, //
            s, c, 0.0, y, //
            0.0, 0.0, 1.0, z, //
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn to_local(&self, p: Point3) -> Point3 {
        rotate_z(sub(p, self.position), -self.yaw)
    }

    pub fn to_world(&self, p: Point3) -> Point3 {
        add(rotate_z(p, self.yaw), self.position)
    }
}
