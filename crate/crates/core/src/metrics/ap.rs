use std::cmp::Ordering;

use crate::detector::Detection;
use crate::geometry::BBox3D;

use super::{bev_iou, MetricsError};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Single-class average precision with all-point interpolation.
///
/// Detections from every frame are pooled and ranked by descending score,
/// ties broken by frame then index. Each detection greedily claims the
/// unmatched ground-truth box in its frame with the highest IoU at or above
/// `iou_threshold`.
pub fn average_precision(
    detections: &[Vec<Detection>],
    truths: &[Vec<BBox3D>],
    iou_threshold: f64,
) -> Result<f64, MetricsError> {
    if detections.len() != truths.len() {
        return Err(MetricsError::FrameCountMismatch {
            detections: detections.len(),
            truths: truths.len(),
        });
    }
    let total_gt: usize = truths.iter().map(Vec::len).sum();
    if total_gt == 0 {
        return Err(MetricsError::NoGroundTruth);
    }

    let mut ranked: Vec<(usize, usize, f64)> = detections
        .iter()
        .enumerate()
        .flat_map(|(f, ds)| ds.iter().enumerate().map(move |(i, d)| (f, i, d.score)))
        .collect();
    ranked.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .unwrap_or(Ordering::Equal)
            .then(a.0.cmp(&b.0))
            .then(a.1.cmp(&b.1))
    });

    let mut taken: Vec<Vec<bool>> = truths.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(ranked.len());
    for (rank, &(f, i, _)) in ranked.iter().enumerate() {
        let det = &detections[f][i].bbox;
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in truths[f].iter().enumerate() {
            if taken[f][g] {
                continue;
            }
            let iou = bev_iou(det, gt);
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[f][g] = true;
            tp += 1;
        }
        curve.push((tp as f64 / total_gt as f64, tp as f64 / (rank + 1) as f64));
    }

    let mut ap = 0.0;
    let mut envelope = 0.0f64;
    for k in (0..curve.len()).rev() {
        envelope = envelope.max(curve[k].1);
        let prev_recall = if k == 0 { 0.0 } else { curve[k - 1].0 };
        ap += (curve[k].0 - prev_recall) * envelope;
    }
    Ok(ap)
}

/// `100 * AP(adv) / AP(clean)` against shared ground truth.
pub fn map_ratio(
    clean: &[Vec<Detection>],
    adv: &[Vec<Detection>],
    truths: &[Vec<BBox3D>],
    iou_threshold: f64,
) -> Result<f64, MetricsError> {
    let base = average_precision(clean, truths, iou_threshold)?;
    if base <= 0.0 {
        return Err(MetricsError::ZeroCleanMap);
    }
    Ok(100.0 * average_precision(adv, truths, iou_threshold)? / base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn car(x: f64, y: f64) -> BBox3D {
        BBox3D::new([x, y, 0.0], [4.0, 2.0, 1.5], 0.0)
    }

    fn det(b: BBox3D, score: f64) -> Detection {
        Detection { bbox: b, score }
    }

    #[test]
    fn perfect_predictions() {
        let gts = vec![vec![car(10.0, 0.0), car(20.0, 5.0)], vec![car(15.0, -3.0)]];
        let dets: Vec<Vec<Detection>> =
            gts.iter().map(|g| g.iter().map(|b| det(*b, 1.0)).collect()).collect();
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 1.0);
        assert_eq!(map_ratio(&dets, &dets, &gts, 0.5).unwrap(), 100.0);
    }

    #[test]
    fn no_predictions() {
        let gts = vec![vec![car(10.0, 0.0)]];
        assert_eq!(average_precision(&[vec![]], &gts, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn no_ground_truth_is_an_error() {
        assert_eq!(
            average_precision(&[vec![det(car(1.0, 1.0), 0.9)]], &[vec![]], 0.5),
            Err(MetricsError::NoGroundTruth)
        );
    }

    #[test]
    fn zero_clean_map_is_an_error() {
        let gts = vec![vec![car(10.0, 0.0)]];
        assert_eq!(
            map_ratio(&[vec![]], &[vec![]], &gts, 0.5),
            Err(MetricsError::ZeroCleanMap)
        );
    }

    #[test]
    fn duplicate_detection_is_a_false_positive() {
        let gts = vec![vec![car(10.0, 0.0)]];
        let dets = vec![vec![det(car(10.0, 0.0), 0.9), det(car(10.1, 0.0), 0.8)]];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 1.0);
        let dets = vec![vec![det(car(10.1, 0.0), 0.9), det(car(10.0, 0.0), 0.95)]];
        assert_eq!(average_precision(&dets, &gts, 0.5).unwrap(), 1.0);
    }

    proptest! {
        #[test]
        fn invariant_to_frame_order(
            scores in prop::collection::vec(0.01f64..1.0, 6),
            hits in prop::collection::vec(any::<bool>(), 6),
            perm_seed in any::<u64>(),
        ) {
            let mut gts = Vec::new();
            let mut dets = Vec::new();
            for f in 0..6 {
                gts.push(vec![car(10.0 + f as f64, 0.0)]);
                let x = if hits[f] { 10.0 + f as f64 } else { 40.0 };
                dets.push(vec![det(car(x, 0.0), scores[f])]);
            }
            let before = average_precision(&dets, &gts, 0.5).unwrap();
            let mut order: Vec<usize> = (0..6).collect();
            order.rotate_left((perm_seed % 6) as usize);
            if perm_seed & 64 != 0 {
                order.reverse();
            }
            let g2: Vec<_> = order.iter().map(|&i| gts[i].clone()).collect();
            let d2: Vec<_> = order.iter().map(|&i| dets[i].clone()).collect();
            let after = average_precision(&d2, &g2, 0.5).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn deleting_a_true_positive_never_raises_ap(
            scores in prop::collection::vec(0.01f64..1.0, 8),
            hits in prop::collection::vec(any::<bool>(), 8),
            victim in 0usize..8,
        ) {
            // One detection per frame, so a deleted match cannot be reclaimed.
            let gts: Vec<_> = (0..8).map(|f| vec![car(10.0 + f as f64, 0.0)]).collect();
            let mut dets: Vec<Vec<Detection>> = (0..8)
                .map(|f| {
                    let x = if hits[f] { 10.0 + f as f64 } else { 40.0 };
                    vec![det(car(x, 0.0), scores[f])]
                })
                .collect();
            let before = average_precision(&dets, &gts, 0.5).unwrap();
            if hits[victim] {
                dets[victim].clear();
                let after = average_precision(&dets, &gts, 0.5).unwrap();
                prop_assert!(after <= before + 1e-12);
            }
        }
    }
}
