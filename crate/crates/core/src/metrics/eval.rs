use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorModel};
use crate::exec::Exec;
use crate::geometry::{BBox3D, Point3};

use super::{average_precision, chamfer_with, MetricsError, DEFAULT_IOU_THRESHOLD};

/// Margin around a box within which a LiDAR return counts as hitting it.
const HIT_MARGIN_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub iou_threshold: f64,
    /// Ground-truth boxes with fewer returns in the clean cloud are ignored.
    pub min_points: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            min_points: 5,
        }
    }
}

/// Boxes the detector could in principle find: center inside its anchor
/// range and at least `min_points` non-ground returns on the object.
pub fn visible_truth(
    model: &DetectorModel,
    cloud: &[Point3],
    gt: &[BBox3D],
    min_points: usize,
) -> Vec<BBox3D> {
    gt.iter()
        .filter(|b| {
            let [x, y, _] = b.center;
            (model.x_range_m[0]..=model.x_range_m[1]).contains(&x)
                && (model.y_range_m[0]..=model.y_range_m[1]).contains(&y)
        })
        .filter(|b| {
            cloud
                .iter()
                .filter(|p| model.active(p) && b.contains_inflated(**p, HIT_MARGIN_M))
                .take(min_points)
                .count()
                >= min_points
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub map_clean: f64,
    pub map_adv: f64,
    pub map_ratio: f64,
    pub mean_cd: f64,
}

/// Detect on both datasets, score against the visible truth of the clean
/// clouds and average the per-frame Chamfer distance.
pub fn score_pair(
    model: &DetectorModel,
    clean: &[Vec<Point3>],
    adv: &[Vec<Point3>],
    gt: &[Vec<BBox3D>],
    opts: &EvalOptions,
    exec: Exec,
) -> Result<PairScores, MetricsError> {
    if clean.len() != adv.len() || clean.len() != gt.len() {
        return Err(MetricsError::FrameCountMismatch {
            detections: adv.len(),
            truths: clean.len().min(gt.len()),
        });
    }
    let frames = exec.map_range(clean.len(), |i| {
        let truth = visible_truth(model, &clean[i], &gt[i], opts.min_points);
        let cd = if clean[i].is_empty() && adv[i].is_empty() {
            Ok(0.0)
        } else {
            chamfer_with(&clean[i], &adv[i], Exec::Sequential)
        };
        (truth, model.detect(&clean[i]), model.detect(&adv[i]), cd)
    });
    let mut truths = Vec::with_capacity(frames.len());
    let mut det_clean = Vec::with_capacity(frames.len());
    let mut det_adv = Vec::with_capacity(frames.len());
    let mut cd_sum = 0.0;
    for (t, c, a, cd) in frames {
        truths.push(t);
        det_clean.push(c);
        det_adv.push(a);
        cd_sum += cd?;
    }
    let map_clean = average_precision(&det_clean, &truths, opts.iou_threshold)?;
    if map_clean <= 0.0 {
        return Err(MetricsError::ZeroCleanMap);
    }
    let map_adv = average_precision(&det_adv, &truths, opts.iou_threshold)?;
    Ok(PairScores {
        map_clean,
        map_adv,
        map_ratio: 100.0 * map_adv / map_clean,
        mean_cd: if clean.is_empty() { 0.0 } else { cd_sum / clean.len() as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block(cx: f64, cy: f64) -> Vec<Point3> {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..4 {
                pts.push([cx - 2.25 + 0.5 * i as f64, cy - 0.9 + 0.6 * j as f64, -0.5]);
            }
        }
        pts
    }

    #[test]
    fn truth_filter_drops_empty_and_out_of_range_boxes() {
        let model = DetectorModel::default();
        let seen = BBox3D::new([20.0, 0.0, -0.6], [4.5, 1.8, 1.6], 0.0);
        let hidden = BBox3D::new([30.0, 5.0, -0.6], [4.5, 1.8, 1.6], 0.0);
        let behind = BBox3D::new([-10.0, 0.0, -0.6], [4.5, 1.8, 1.6], 0.0);
        let cloud = block(20.0, 0.0);
        assert_eq!(visible_truth(&model, &cloud, &[seen, hidden, behind], 5), [seen]);
    }

    #[test]
    fn identical_datasets_score_one_hundred() {
        let model = DetectorModel {
            surface_offset: false,
            ..DetectorModel::default()
        };
        let clouds = vec![block(20.0, 0.0), block(35.0, 6.0)];
        let gt = vec![
            vec![BBox3D::new([20.0, 0.0, -0.6], [4.5, 1.8, 1.6], 0.0)],
            vec![BBox3D::new([35.0, 6.0, -0.6], [4.5, 1.8, 1.6], 0.0)],
        ];
        let s = score_pair(&model, &clouds, &clouds, &gt, &EvalOptions::default(), Exec::default()).unwrap();
        assert_eq!(s.map_ratio, 100.0);
        assert_eq!(s.mean_cd, 0.0);
        assert!(s.map_clean > 0.0);
    }
}
