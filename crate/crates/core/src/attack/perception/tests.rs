use super::*;
use crate::detector::{Detection, DetectorModel};
use crate::geometry::dist2;
use proptest::prelude::*;

/// Loss is the sum of `w_i . p_i`; gradient is `w_i` for the first points.
struct Linear {
    weights: Vec<Point3>,
}

impl Detector for Linear {
    fn detect(&self, _: &[Point3]) -> Vec<Detection> {
        Vec::new()
    }

    fn detection_loss(&self, points: &[Point3], _: &[BBox3D]) -> f64 {
        points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| p[0] * w[0] + p[1] * w[1] + p[2] * w[2])
            .sum()
    }

    fn loss_gradient(&self, points: &[Point3], _: &[BBox3D]) -> Vec<Point3> {
        (0..points.len())
            .map(|i| self.weights.get(i).copied().unwrap_or([0.0; 3]))
            .collect()
    }
}

fn line(n: usize) -> Vec<Point3> {
    (0..n).map(|i| [i as f64, 0.5 * i as f64, 0.0]).collect()
}

#[test]
fn clip_three_four_five() {
    assert_eq!(clip([0.0; 3], [3.0, 4.0, 0.0], 2.5), [1.5, 2.0, 0.0]);
}

#[test]
fn clip_leaves_interior_points() {
    assert_eq!(clip([1.0, 1.0, 1.0], [1.5, 1.0, 1.0], 1.0), [1.5, 1.0, 1.0]);
}

proptest! {
    #[test]
    fn clip_stays_in_ball_and_keeps_direction(
        d in prop::array::uniform3(-10.0f64..10.0),
        eps in 1e-6f64..5.0,
    ) {
        let c = clip_delta(d, eps);
        prop_assert!(norm(c) <= eps);
        if norm(d) > eps {
            let cos = (c[0] * d[0] + c[1] * d[1] + c[2] * d[2]) / (norm(c) * norm(d));
            prop_assert!((cos - 1.0).abs() < 1e-12);
        } else {
            prop_assert_eq!(c, d);
        }
    }
}

#[test]
fn chunk_sizes_front_load_the_remainder() {
    assert_eq!(chunk_sizes(23, 10), [3, 3, 3, 2, 2, 2, 2, 2, 2, 2]);
    assert_eq!(chunk_sizes(3, 5), [1, 1, 1, 0, 0]);
}

#[test]
fn params_reject_bad_values() {
    assert!(PerturbParams::new(0.0).validate().is_err());
    assert!(DetachParams::new(1.0).validate().is_err());
    assert!(AttachParams::new(0, 0.1).validate().is_err());
    let mut p = PerturbParams::new(0.1);
    p.steps = 0;
    assert!(p.validate().is_err());
}

#[test]
fn perturb_respects_budget_and_is_deterministic() {
    let cloud = line(40);
    let model = Linear { weights: vec![[1.0, -2.0, 0.5]; 40] };
    let params = PerturbParams::new(0.2);
    let a = perturb_attack(&model, &cloud, &[], &params, 9).unwrap();
    let b = perturb_attack(&model, &cloud, &[], &params, 9).unwrap();
    assert_eq!(a.cloud, b.cloud);
    assert_eq!(a.trace.len(), 40);
    for (d, (p, q)) in a.deltas.iter().zip(cloud.iter().zip(&a.cloud)) {
        assert!(norm(*d) <= 0.2 + 1e-9);
        assert_eq!(add(*p, *d), *q);
    }
    let c = perturb_attack(&model, &cloud, &[], &params, 10).unwrap();
    assert_ne!(a.cloud, c.cloud);
}

#[test]
fn perturb_ascends_a_linear_loss() {
    let cloud = line(10);
    let model = Linear { weights: vec![[1.0, 0.0, 0.0]; 10] };
    let mut params = PerturbParams::new(0.5);
    params.lambda = 0.0;
    params.normalization = Normalization::PerPoint;
    let out = perturb_attack(&model, &cloud, &[], &params, 1).unwrap();
    assert!(out.deltas.iter().all(|d| d[0] > 0.0));
    let first = out.trace[0].detection_loss;
    assert!(model.detection_loss(&out.cloud, &[]) > first);
}

#[test]
fn perturb_records_stalls() {
    let cloud = line(5);
    let model = Linear { weights: vec![] };
    let mut params = PerturbParams::new(0.1);
    params.lambda = 0.0;
    let out = perturb_attack(&model, &cloud, &[], &params, 3).unwrap();
    assert!(out.trace.iter().all(|t| t.stalled));
}

#[test]
fn vanishing_budget_leaves_cloud_in_place() {
    let cloud = line(30);
    let model = DetectorModel::default();
    let out = perturb_attack(&model, &cloud, &[], &PerturbParams::new(1e-9), 4).unwrap();
    for (p, q) in cloud.iter().zip(&out.cloud) {
        for c in 0..3 {
            assert!((p[c] - q[c]).abs() <= 1e-9);
        }
    }
}

#[test]
fn perturb_rejects_empty_cloud() {
    let model = Linear { weights: vec![] };
    let err = perturb_attack(&model, &[], &[], &PerturbParams::new(0.1), 0).unwrap_err();
    assert_eq!(err, AttackError::EmptyCloud);
}

#[test]
fn detach_needs_a_budget() {
    let model = Linear { weights: vec![] };
    let err = detach_attack(&model, &line(50), &[], &DetachParams::new(0.01)).unwrap_err();
    assert!(matches!(err, AttackError::EmptyBudget { points: 50, .. }));
}

#[test]
fn detach_with_flat_saliency_drops_lowest_indices() {
    let model = Linear { weights: vec![] };
    let out = detach_attack(&model, &line(100), &[], &DetachParams::new(0.05)).unwrap();
    assert_eq!(out.removed, [0, 1, 2, 3, 4]);
    assert_eq!(out.cloud, line(100)[5..]);
}

#[test]
fn detach_removes_the_salient_points() {
    let mut weights = vec![[0.0; 3]; 100];
    weights[42] = [0.0, 0.0, 9.0];
    weights[17] = [3.0, 0.0, 0.0];
    let model = Linear { weights };
    let mut params = DetachParams::new(0.02);
    params.iterations = 1;
    let out = detach_attack(&model, &line(100), &[], &params).unwrap();
    assert_eq!(out.removed, [42, 17]);
}

#[test]
fn attach_copies_the_most_salient_point() {
    let mut weights = vec![[0.1, 0.0, 0.0]; 20];
    weights[7] = [0.0, 5.0, 0.0];
    let model = Linear { weights };
    let cloud = line(20);
    let out = attach_attack(&model, &cloud, &[], &AttachParams::new(1, 0.3)).unwrap();
    assert_eq!(out.init, [cloud[7]]);
    assert_eq!(out.injected, [20]);
    assert_eq!(out.cloud[..20], cloud[..]);
    assert!(dist2(out.cloud[20], cloud[7]).sqrt() <= 0.3 + 1e-9);
}

#[test]
fn attach_needs_enough_points() {
    let model = Linear { weights: vec![] };
    let err = attach_attack(&model, &line(3), &[], &AttachParams::new(4, 0.1)).unwrap_err();
    assert_eq!(err, AttackError::TooFewPoints { points: 3, k: 4 });
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn attach_keeps_originals_and_budget(
        n in 5usize..40,
        k in 1usize..5,
        eps in 0.01f64..1.0,
        wx in -1.0f64..1.0,
        per_point in any::<bool>(),
    ) {
        let model = Linear { weights: (0..n + k).map(|i| [wx, (i % 3) as f64 - 1.0, 0.0]).collect() };
        let cloud = line(n);
        let mut params = AttachParams::new(k, eps);
        if per_point {
            params.normalization = Normalization::PerPoint;
        }
        let out = attach_attack(&model, &cloud, &[], &params).unwrap();
        prop_assert_eq!(&out.cloud[..n], &cloud[..]);
        prop_assert_eq!(out.cloud.len(), n + k);
        for (z, z0) in out.cloud[n..].iter().zip(&out.init) {
            prop_assert!(dist2(*z, *z0).sqrt() <= eps + 1e-9);
        }
    }

    #[test]
    fn detach_output_is_an_ordered_subset(
        n in 20usize..120,
        ratio in 0.05f64..0.5,
        seed in any::<u64>(),
    ) {
        let weights: Vec<Point3> = (0..n)
            .map(|i| [((seed >> (i % 60)) & 7) as f64, 0.0, 0.0])
            .collect();
        let model = Linear { weights };
        let cloud = line(n);
        let params = DetachParams::new(ratio);
        let out = detach_attack(&model, &cloud, &[], &params).unwrap();
        let m = (n as f64 * ratio).floor() as usize;
        prop_assert_eq!(out.removed.len(), m);
        prop_assert_eq!(out.cloud.len(), n - m);
        let mut kept = (0..n).filter(|i| !out.removed.contains(i)).map(|i| cloud[i]);
        prop_assert!(out.cloud.iter().all(|p| Some(*p) == kept.next()));
    }
}
