//! Differentiable surrogate 3D detector.
//!
//! Every anchor `a` of a bird's-eye-view lattice accumulates a Gaussian
//! density `d_a = sum_i exp(-|p_i - mu_a|^2 / (2 sigma^2))` over the (x, y)
//! coordinates of the cloud, and fires with occupancy
//! `o_a = sigmoid(w * d_a + b)`. The detection loss is the anchor-mean binary
//! cross-entropy against "anchor lies inside a ground-truth footprint"
//! targets, and its gradient with respect to every point is analytic.
//!
//! Pairs farther apart than [`CUTOFF_SIGMAS`] bandwidths are skipped; their
//! kernel value is below 1.3e-14. Points at or below `ground_z_m` are treated
//! as ground returns and contribute nothing.

mod grid;

use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::geometry::{norm, BBox3D, Point3};
use crate::metrics::bev_iou;

use grid::{AnchorGrid, Buckets};

pub const CUTOFF_SIGMAS: f64 = 8.0;
/// Occupancies are clamped to `[OCC_CLAMP, 1 - OCC_CLAMP]` inside the loss.
pub const OCC_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorModel {
    /// Anchor spacing.
    pub cell_size_m: f64,
    pub x_range_m: [f64; 2],
    pub y_range_m: [f64; 2],
    /// Kernel bandwidth sigma_k.
    pub bandwidth_m: f64,
    pub weight: f64,
    pub bias: f64,
    pub score_threshold: f64,
    /// (length, width, height) of every predicted box.
    pub box_template: [f64; 3],
    pub nms_iou: f64,
    /// Ground gate in the sensor frame; `None` keeps every point.
    pub ground_z_m: Option<f64>,
    /// Push each predicted center from the visible surface to the template
    /// center along the viewing ray.
    pub surface_offset: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self {
            cell_size_m: 2.0,
            x_range_m: [0.0, 70.0],
            y_range_m: [-40.0, 40.0],
            bandwidth_m: 1.0,
            weight: 1.0,
            bias: -4.0,
            score_threshold: 0.5,
            box_template: [4.5, 1.8, 1.6],
            nms_iou: 0.5,
            ground_z_m: Some(-1.4),
            surface_offset: true,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BBox3D,
    pub score: f64,
}

/// Per-point saliency `s_i = |grad_{p_i} L_det|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub scores: Vec<f64>,
}

impl SaliencyMap {
    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.scores.iter().copied().enumerate()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices of the `k` highest scores; ties go to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }
}

/// What the perception attacks need from a detector.
pub trait Detector: Sync {
    fn detect(&self, points: &[Point3]) -> Vec<Detection>;

    fn detection_loss(&self, points: &[Point3], gt: &[BBox3D]) -> f64;

    fn loss_gradient(&self, points: &[Point3], gt: &[BBox3D]) -> Vec<Point3>;

    fn loss_and_gradient(&self, points: &[Point3], gt: &[BBox3D]) -> (f64, Vec<Point3>) {
        (
            self.detection_loss(points, gt),
            self.loss_gradient(points, gt),
        )
    }

    fn saliency(&self, points: &[Point3], gt: &[BBox3D]) -> SaliencyMap {
        SaliencyMap {
            scores: self.loss_gradient(points, gt).into_iter().map(norm).collect(),
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-anchor accumulation of one forward pass.
#[derive(Debug, Clone, Copy, Default)]
struct AnchorSum {
    density: f64,
    weighted: Point3,
}

impl DetectorModel {
    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.bandwidth_m > 0.0) {
            return Err("bandwidth_m must be > 0".into());
        }
        if !(self.cell_size_m > 0.0) {
            return Err("cell_size_m must be > 0".into());
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err("score_threshold must lie in (0, 1)".into());
        }
        if !(self.x_range_m[0] < self.x_range_m[1] && self.y_range_m[0] < self.y_range_m[1]) {
            return Err("anchor ranges must be non-empty".into());
        }
        if self.box_template.iter().any(|d| !(*d > 0.0)) {
            return Err("box_template dimensions must be > 0".into());
        }
        Ok(())
    }

    fn grid(&self) -> AnchorGrid {
        AnchorGrid::new(
            self.x_range_m,
            self.y_range_m,
            self.cell_size_m,
            CUTOFF_SIGMAS * self.bandwidth_m,
        )
    }

    /// False for points at or below the ground gate.
    pub fn active(&self, p: &Point3) -> bool {
        self.ground_z_m.is_none_or(|g| p[2] > g)
    }

    #[inline]
    fn kernel(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.bandwidth_m * self.bandwidth_m)).exp()
    }

    /// Anchor centers in lattice order (x-major).
    pub fn anchor_centers(&self) -> Vec<[f64; 2]> {
        let g = self.grid();
        (0..g.len()).map(|a| g.center(a)).collect()
    }

    fn accumulate(&self, grid: &AnchorGrid, buckets: &Buckets, points: &[Point3]) -> Vec<AnchorSum> {
        let cutoff2 = grid.cutoff * grid.cutoff;
        self.exec.map_range(grid.len(), |a| {
            let mu = grid.center(a);
            let mut acc = AnchorSum::default();
            for i in buckets.around_anchor(grid, a) {
                let p = points[i];
                let d2 = (p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2);
                if d2 <= cutoff2 {
                    let k = self.kernel(d2);
                    acc.density += k;
                    for (w, v) in acc.weighted.iter_mut().zip(p) {
                        *w += k * v;
                    }
                }
            }
            acc
        })
    }

    /// Raw anchor densities `d_a` in lattice order.
    pub fn densities(&self, points: &[Point3]) -> Vec<f64> {
        let grid = self.grid();
        let buckets = Buckets::new(&grid, points, |p| self.active(p));
        self.accumulate(&grid, &buckets, points)
            .into_iter()
            .map(|s| s.density)
            .collect()
    }

    pub fn occupancies(&self, points: &[Point3]) -> Vec<f64> {
        self.densities(points)
            .into_iter()
            .map(|d| sigmoid(self.weight * d + self.bias))
            .collect()
    }

    /// Binary targets: 1 where the anchor center lies inside a GT footprint.
    pub fn targets(&self, gt: &[BBox3D]) -> Vec<bool> {
        self.anchor_centers()
            .into_iter()
            .map(|[x, y]| gt.iter().any(|b| b.contains_bev(x, y)))
            .collect()
    }

    fn bce(&self, occ: &[f64], targets: &[bool]) -> f64 {
        let n = occ.len() as f64;
        let sum: f64 = occ
            .iter()
            .zip(targets)
            .map(|(&o, &t)| {
                let o = o.clamp(OCC_CLAMP, 1.0 - OCC_CLAMP);
                if t {
                    o.ln()
                } else {
                    (1.0 - o).ln()
                }
            })
            .sum();
        -sum / n
    }

    /// `dL/dd_a`, zero where the clamp is active.
    fn density_sensitivity(&self, occ: &[f64], targets: &[bool]) -> Vec<f64> {
        let n = occ.len() as f64;
        occ.iter()
            .zip(targets)
            .map(|(&o, &t)| {
                if !(OCC_CLAMP..=1.0 - OCC_CLAMP).contains(&o) {
                    return 0.0;
                }
                let dl_do = if t { -1.0 / o } else { 1.0 / (1.0 - o) } / n;
                dl_do * o * (1.0 - o) * self.weight
            })
            .collect()
    }

    fn gradient_from(
        &self,
        grid: &AnchorGrid,
        points: &[Point3],
        sensitivity: &[f64],
    ) -> Vec<Point3> {
        let cutoff2 = grid.cutoff * grid.cutoff;
        let inv_s2 = 1.0 / (self.bandwidth_m * self.bandwidth_m);
        self.exec.map_range(points.len(), |i| {
            let p = points[i];
            if !self.active(&p) {
                return [0.0; 3];
            }
            let mut g = [0.0; 3];
            for a in grid.anchors_around(p) {
                let c = sensitivity[a];
                if c == 0.0 {
                    continue;
                }
                let mu = grid.center(a);
                let (dx, dy) = (mu[0] - p[0], mu[1] - p[1]);
                let d2 = dx * dx + dy * dy;
                if d2 <= cutoff2 {
                    let k = c * self.kernel(d2) * inv_s2;
                    g[0] += k * dx;
                    g[1] += k * dy;
                }
            }
            g
        })
    }

    fn forward(&self, points: &[Point3], gt: &[BBox3D]) -> (AnchorGrid, Vec<f64>, Vec<bool>) {
        let grid = self.grid();
        let buckets = Buckets::new(&grid, points, |p| self.active(p));
        let occ: Vec<f64> = self
            .accumulate(&grid, &buckets, points)
            .into_iter()
            .map(|s| sigmoid(self.weight * s.density + self.bias))
            .collect();
        let targets = self.targets(gt);
        (grid, occ, targets)
    }

    fn predicted_box(&self, mu: [f64; 2], sum: &AnchorSum) -> BBox3D {
        let [l, w, h] = self.box_template;
        let (mut cx, mut cy, cz) = if sum.density > 0.0 {
            (
                sum.weighted[0] / sum.density,
                sum.weighted[1] / sum.density,
                sum.weighted[2] / sum.density,
            )
        } else {
            (mu[0], mu[1], 0.0)
        };
        if self.surface_offset {
            let r = (cx * cx + cy * cy).sqrt();
            if r > 0.0 {
                let (ux, uy) = (cx / r, cy / r);
                let along_x = if ux != 0.0 { l / 2.0 / ux.abs() } else { f64::INFINITY };
                let along_y = if uy != 0.0 { w / 2.0 / uy.abs() } else { f64::INFINITY };
                let depth = along_x.min(along_y);
                cx += ux * depth;
                cy += uy * depth;
            }
        }
        BBox3D::new([cx, cy, cz + h / 2.0], [l, w, h], 0.0)
    }
}

impl Detector for DetectorModel {
    fn detect(&self, points: &[Point3]) -> Vec<Detection> {
        let grid = self.grid();
        let buckets = Buckets::new(&grid, points, |p| self.active(p));
        let sums = self.accumulate(&grid, &buckets, points);
        let mut candidates: Vec<(usize, Detection)> = sums
            .iter()
            .enumerate()
            .filter_map(|(a, s)| {
                let score = sigmoid(self.weight * s.density + self.bias);
                (score > self.score_threshold).then(|| {
                    (
                        a,
                        Detection {
                            bbox: self.predicted_box(grid.center(a), s),
                            score,
                        },
                    )
                })
            })
            .collect();
        candidates.sort_by(|(ia, a), (ib, b)| b.score.total_cmp(&a.score).then(ia.cmp(ib)));
        let mut kept: Vec<Detection> = Vec::new();
        for (_, c) in candidates {
            if kept.iter().all(|k| bev_iou(&k.bbox, &c.bbox) <= self.nms_iou) {
                kept.push(c);
            }
        }
        kept
    }

    fn detection_loss(&self, points: &[Point3], gt: &[BBox3D]) -> f64 {
        let (_, occ, targets) = self.forward(points, gt);
        self.bce(&occ, &targets)
    }

    fn loss_gradient(&self, points: &[Point3], gt: &[BBox3D]) -> Vec<Point3> {
        self.loss_and_gradient(points, gt).1
    }

    fn loss_and_gradient(&self, points: &[Point3], gt: &[BBox3D]) -> (f64, Vec<Point3>) {
        let (grid, occ, targets) = self.forward(points, gt);
        let loss = self.bce(&occ, &targets);
        let sens = self.density_sensitivity(&occ, &targets);
        (loss, self.gradient_from(&grid, points, &sens))
    }
}
