use crate::exec::Exec;
use crate::geometry::Point3;
use crate::nn::KdTree;

use super::MetricsError;

fn mean_nearest(from: &[Point3], to: &KdTree, exec: Exec) -> f64 {
    let d = exec.map_slice(from, |p| to.nearest(*p).map_or(0.0, |(_, d2)| d2));
    d.iter().sum::<f64>() / from.len() as f64
}

/// Symmetric Chamfer distance: mean squared nearest-neighbour distance from
/// `p` to `q` plus the same from `q` to `p`.
pub fn chamfer(p: &[Point3], q: &[Point3]) -> Result<f64, MetricsError> {
    chamfer_with(p, q, Exec::default())
}

pub fn chamfer_with(p: &[Point3], q: &[Point3], exec: Exec) -> Result<f64, MetricsError> {
    if p.is_empty() || q.is_empty() {
        return Err(MetricsError::EmptyCloud);
    }
    if p == q {
        return Ok(0.0);
    }
    let tp = KdTree::new(p);
    let tq = KdTree::new(q);
    Ok(mean_nearest(p, &tq, exec) + mean_nearest(q, &tp, exec))
}
