//! Gradient attacks against any [`Detector`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detector::Detector;
use crate::geometry::{add, norm, scale, sub, BBox3D, Point3};
use crate::nn::KdTree;
use crate::seed;

use super::AttackError;

/// Gradient norms below this are treated as a stall.
pub const STALL_NORM: f64 = 1e-12;

/// How the update direction is normalized.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One norm over the whole gradient matrix.
    #[default]
    Global,
    /// Every point moves a full step along its own gradient.
    PerPoint,
}

fn default_steps() -> usize {
    40
}

fn default_lambda() -> f64 {
    0.1
}

fn default_lambda_chamfer() -> f64 {
    1.0
}

fn default_iterations() -> usize {
    10
}

fn default_k() -> usize {
    300
}

fn check_budget(epsilon: f64, steps: usize, alpha: f64) -> Result<(), String> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err("epsilon_m must be a positive finite number".into());
    }
    if steps < 1 {
        return Err("steps must be >= 1".into());
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err("alpha_m must be a positive finite number".into());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbParams {
    pub epsilon_m: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_m: Option<f64>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl PerturbParams {
    pub fn new(epsilon_m: f64) -> Self {
        PerturbParams {
            epsilon_m,
            steps: default_steps(),
            alpha_m: None,
            lambda: default_lambda(),
            seed: None,
            normalization: Normalization::Global,
        }
    }

    /// Step size, `epsilon / 30` unless set.
    pub fn alpha(&self) -> f64 {
        self.alpha_m.unwrap_or(self.epsilon_m / 30.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        check_budget(self.epsilon_m, self.steps, self.alpha())?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err("lambda must be a non-negative finite number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetachParams {
    pub drop_ratio: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl DetachParams {
    pub fn new(drop_ratio: f64) -> Self {
        DetachParams {
            drop_ratio,
            iterations: default_iterations(),
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.drop_ratio > 0.0 && self.drop_ratio < 1.0) {
            return Err("drop_ratio must lie in (0, 1)".into());
        }
        if self.iterations < 1 {
            return Err("iterations must be >= 1".into());
        }
        Ok(())
    }

    /// `floor(n * drop_ratio)`.
    pub fn budget(&self, n: usize) -> usize {
        (n as f64 * self.drop_ratio).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttachParams {
    #[serde(default = "default_k")]
    pub k: usize,
    pub epsilon_m: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_m: Option<f64>,
    #[serde(default = "default_lambda_chamfer")]
    pub lambda_chamfer: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub normalization: Normalization,
}

impl AttachParams {
    pub fn new(k: usize, epsilon_m: f64) -> Self {
        AttachParams {
            k,
            epsilon_m,
            steps: default_steps(),
            alpha_m: None,
            lambda_chamfer: default_lambda_chamfer(),
            seed: None,
            normalization: Normalization::Global,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha_m.unwrap_or(self.epsilon_m / 30.0)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err("k must be >= 1".into());
        }
        check_budget(self.epsilon_m, self.steps, self.alpha())?;
        if !(self.lambda_chamfer >= 0.0 && self.lambda_chamfer.is_finite()) {
            return Err("lambda_chamfer must be a non-negative finite number".into());
        }
        Ok(())
    }
}

/// Project `p` onto the ball of radius `epsilon` around `origin`.
pub fn clip(origin: Point3, p: Point3, epsilon: f64) -> Point3 {
    add(origin, clip_delta(sub(p, origin), epsilon))
}

/// Rescale `delta` to norm `epsilon` when it is longer.
pub fn clip_delta(delta: Point3, epsilon: f64) -> Point3 {
    let n = norm(delta);
    if n <= epsilon {
        return delta;
    }
    let mut out = scale(delta, epsilon / n);
    // Rounding can leave the result one ulp outside the ball.
    while norm(out) > epsilon {
        out = scale(out, 1.0 - f64::EPSILON);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceStep {
    pub step: usize,
    /// Combined objective that the step descends.
    pub objective: f64,
    pub detection_loss: f64,
    pub grad_norm: f64,
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub cloud: Vec<Point3>,
    pub deltas: Vec<Point3>,
    pub trace: Vec<TraceStep>,
}

#[derive(Debug, Clone)]
pub struct DetachOutcome {
    pub cloud: Vec<Point3>,
    /// Original indices in removal order.
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AttachOutcome {
    pub cloud: Vec<Point3>,
    /// Indices of the injected points in `cloud`.
    pub injected: Vec<usize>,
    /// Starting position of every injected point.
    pub init: Vec<Point3>,
    pub trace: Vec<TraceStep>,
}

/// Move every point a step of length `alpha` against `grad` under the given
/// normalization. Returns the norm used for stall detection.
fn descend(points: &mut [Point3], grad: &[Point3], alpha: f64, mode: Normalization) -> (f64, bool) {
    match mode {
        Normalization::Global => {
            let g = grad.iter().map(|g| g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sum::<f64>().sqrt();
            if g < STALL_NORM {
                return (g, true);
            }
            for (p, gi) in points.iter_mut().zip(grad) {
                *p = sub(*p, scale(*gi, alpha / g));
            }
            (g, false)
        }
        Normalization::PerPoint => {
            let mut largest = 0.0f64;
            for (p, gi) in points.iter_mut().zip(grad) {
                let n = norm(*gi);
                largest = largest.max(n);
                if n >= STALL_NORM {
                    *p = sub(*p, scale(*gi, alpha / n));
                }
            }
            (largest, largest < STALL_NORM)
        }
    }
}

/// Projected gradient ascent on the detection loss with an L2 penalty on the
/// perturbation, each point confined to an `epsilon` ball.
pub fn perturb_attack<D: Detector + ?Sized>(
    model: &D,
    cloud: &[Point3],
    gt: &[BBox3D],
    params: &PerturbParams,
    seed: u64,
) -> Result<PerturbOutcome, AttackError> {
    params.validate().map_err(AttackError::InvalidParams)?;
    if cloud.is_empty() {
        return Err(AttackError::EmptyCloud);
    }
    let eps = params.epsilon_m;
    let alpha = params.alpha();
    let mut rng = seed::rng(params.seed.unwrap_or(seed));
    let mut adv: Vec<Point3> = cloud
        .iter()
        .map(|p| {
            let d = [
                rng.random_range(-eps..=eps),
                rng.random_range(-eps..=eps),
                rng.random_range(-eps..=eps),
            ];
            add(*p, clip_delta(d, eps))
        })
        .collect();

    let mut trace = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let (l_det, g_det) = model.loss_and_gradient(&adv, gt);
        let mut penalty = 0.0;
        let grad: Vec<Point3> = adv
            .iter()
            .zip(cloud)
            .zip(&g_det)
            .map(|((a, p), g)| {
                let d = sub(*a, *p);
                penalty += d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                sub(scale(d, 2.0 * params.lambda), *g)
            })
            .collect();
        let (grad_norm, stalled) = descend(&mut adv, &grad, alpha, params.normalization);
        if !stalled {
            for (a, p) in adv.iter_mut().zip(cloud) {
                *a = clip(*p, *a, eps);
            }
        }
        trace.push(TraceStep {
            step,
            objective: -l_det + params.lambda * penalty,
            detection_loss: l_det,
            grad_norm,
            stalled,
        });
    }
    let deltas = adv.iter().zip(cloud).map(|(a, p)| sub(*a, *p)).collect();
    Ok(PerturbOutcome { cloud: adv, deltas, trace })
}

/// Split `m` into `parts` chunks; the first `m % parts` take one extra.
pub fn chunk_sizes(m: usize, parts: usize) -> Vec<usize> {
    let (base, extra) = (m / parts, m % parts);
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Greedy removal of the most salient points, re-scoring after every chunk.
pub fn detach_attack<D: Detector + ?Sized>(
    model: &D,
    cloud: &[Point3],
    gt: &[BBox3D],
    params: &DetachParams,
) -> Result<DetachOutcome, AttackError> {
    params.validate().map_err(AttackError::InvalidParams)?;
    let m = params.budget(cloud.len());
    if m == 0 {
        return Err(AttackError::EmptyBudget {
            points: cloud.len(),
            ratio: params.drop_ratio,
        });
    }
    let mut alive: Vec<usize> = (0..cloud.len()).collect();
    let mut removed = Vec::with_capacity(m);
    for chunk in chunk_sizes(m, params.iterations) {
        if chunk == 0 {
            continue;
        }
        let current: Vec<Point3> = alive.iter().map(|&i| cloud[i]).collect();
        let mut drop = model.saliency(&current, gt).top_k(chunk);
        removed.extend(drop.iter().map(|&j| alive[j]));
        drop.sort_unstable();
        for j in drop.into_iter().rev() {
            alive.remove(j);
        }
    }
    Ok(DetachOutcome {
        cloud: alive.iter().map(|&i| cloud[i]).collect(),
        removed,
    })
}

/// `D_C(P, P ∪ Z)` when every point of `P` is in the union:
/// `(1 / (|P| + |Z|)) * sum_z min_p |z - p|^2`, with the nearest neighbours.
fn union_chamfer(tree: &KdTree, cloud: &[Point3], z: &[Point3]) -> (f64, Vec<Point3>) {
    let total = (cloud.len() + z.len()) as f64;
    let mut sum = 0.0;
    let nearest = z
        .iter()
        .map(|q| {
            let (i, d2) = tree.nearest(*q).expect("cloud is non-empty");
            sum += d2;
            cloud[i]
        })
        .collect();
    (sum / total, nearest)
}

/// Inject copies of the `k` most salient points and shift only the copies,
/// regularized by the Chamfer distance to the clean cloud.
pub fn attach_attack<D: Detector + ?Sized>(
    model: &D,
    cloud: &[Point3],
    gt: &[BBox3D],
    params: &AttachParams,
) -> Result<AttachOutcome, AttackError> {
    params.validate().map_err(AttackError::InvalidParams)?;
    let (n, k) = (cloud.len(), params.k);
    if k > n {
        return Err(AttackError::TooFewPoints { points: n, k });
    }
    let init: Vec<Point3> = model
        .saliency(cloud, gt)
        .top_k(k)
        .into_iter()
        .map(|i| cloud[i])
        .collect();
    let tree = KdTree::new(cloud);
    let eps = params.epsilon_m;
    let alpha = params.alpha();
    let scale_cd = 2.0 * params.lambda_chamfer / (n + k) as f64;

    let mut full: Vec<Point3> = cloud.iter().chain(&init).copied().collect();
    let mut trace = Vec::with_capacity(params.steps);
    for step in 0..params.steps {
        let (l_det, g_det) = model.loss_and_gradient(&full, gt);
        let (cd, nearest) = union_chamfer(&tree, cloud, &full[n..]);
        let grad: Vec<Point3> = full[n..]
            .iter()
            .zip(&nearest)
            .zip(&g_det[n..])
            .map(|((z, p), g)| sub(scale(sub(*z, *p), scale_cd), *g))
            .collect();
        let (grad_norm, stalled) = descend(&mut full[n..], &grad, alpha, params.normalization);
        if !stalled {
            for (z, z0) in full[n..].iter_mut().zip(&init) {
                *z = clip(*z0, *z, eps);
            }
        }
        trace.push(TraceStep {
            step,
            objective: -l_det + params.lambda_chamfer * cd,
            detection_loss: l_det,
            grad_norm,
            stalled,
        });
    }
    Ok(AttachOutcome {
        cloud: full,
        injected: (n..n + k).collect(),
        init,
        trace,
    })
}

#[cfg(test)]
mod tests;
