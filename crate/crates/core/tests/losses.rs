mod common;

use common::*;
use proptest::prelude::*;
use stembed_core::embedding_loss::{
    total_instance_loss, weighted_instance_loss, windowed_attraction_loss, TermWeights,
};
use stembed_core::geometry::{CameraModel, PhotometricConfig, PoseSE3, Reduction, SourceView, ViewSynthesis};
use stembed_core::synthetic_scenes::plane_fixture;
use stembed_core::{InstanceLabelMap, InstancePartition, LossConfig, Tensor};

#[test]
fn loss_gradient_matches_naive_oracle_across_shapes() {
    let cfg = LossConfig {
        rho_a: 0.3,
        rho_r: 0.8,
        lambda_reg: 0.01,
        ..LossConfig::default()
    };
    for (seed, dims) in [[1, 1, 2, 3], [2, 3, 2, 2], [5, 1, 4, 4], [4, 4, 1, 3]].iter().enumerate() {
        let mut r = rng(seed as u64);
        let (y, labels) = loop {
            let case = random_embedding_case(&mut r, *dims);
            if kink_margin(&case.0, &case.1, &cfg) > 1e-2 {
                break case;
            }
        };
        let part = InstancePartition::from_labels(&labels);
        let lib = total_instance_loss(&y, &part, &cfg).unwrap();
        let shape = y.shape().to_vec();
        let oracle = |x: &[f64]| {
            let n = naive_loss(&Tensor::new(shape.clone(), x.to_vec()).unwrap(), &labels, &cfg);
            cfg.lambda_a * n.attraction + cfg.lambda_r * n.repulsion + cfg.lambda_reg * n.regularisation
        };
        assert!((oracle(y.data()) - lib.total).abs() < 1e-12);
        let fd = central_diff(oracle, y.data(), 1e-6);
        assert!(rel_err(lib.grad.data(), &fd) < 1e-6, "shape {dims:?}");
    }
}

#[test]
fn background_pixels_get_no_gradient() {
    let mut r = rng(7);
    let (y, labels) = random_embedding_case(&mut r, [3, 2, 3, 3]);
    let part = InstancePartition::from_labels(&labels);
    let loss = total_instance_loss(&y, &part, &LossConfig::default()).unwrap();
    for (t, map) in labels.iter().enumerate() {
        for i in 0..9 {
            if map.ids()[i] == 0 {
                for c in 0..3 {
                    assert_eq!(loss.grad.at(&[c, t, i / 3, i % 3]), 0.0);
                }
            }
        }
    }
}

#[test]
fn repulsion_gradient_sums_to_zero() {
    // the repulsion term only depends on differences of means
    let mut r = rng(3);
    let (y, labels) = random_embedding_case(&mut r, [2, 1, 4, 4]);
    let part = InstancePartition::from_labels(&labels);
    let g = weighted_instance_loss(&y, &part, &LossConfig::default(), TermWeights::REPULSION).unwrap();
    for c in 0..2 {
        let s: f64 = (0..16).map(|i| g.grad.at(&[c, 0, i / 4, i % 4])).sum();
        assert!(s.abs() < 1e-12);
    }
}

fn shifted(y: &Tensor<f64>, offset: &[f64]) -> Tensor<f64> {
    let p = y.shape()[0];
    let per = y.len() / p;
    let data = y.data().iter().enumerate().map(|(i, v)| v + offset[i / per]).collect();
    Tensor::new(y.shape().to_vec(), data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn attraction_and_repulsion_are_translation_invariant(seed in 0u64..10_000, dx in -3.0f64..3.0, dy in -3.0f64..3.0) {
        let mut r = rng(seed);
        let (y, labels) = random_embedding_case(&mut r, [2, 2, 3, 3]);
        let part = InstancePartition::from_labels(&labels);
        let cfg = LossConfig::default();
        let a = total_instance_loss(&y, &part, &cfg).unwrap();
        let b = total_instance_loss(&shifted(&y, &[dx, dy]), &part, &cfg).unwrap();
        prop_assert!((a.attraction - b.attraction).abs() < 1e-9);
        prop_assert!((a.repulsion - b.repulsion).abs() < 1e-9);
    }

    #[test]
    fn loss_is_invariant_to_instance_relabelling(seed in 0u64..10_000, offset in 1u32..50) {
        let mut r = rng(seed);
        let (y, labels) = random_embedding_case(&mut r, [3, 2, 3, 3]);
        let cfg = LossConfig::default();
        let part = InstancePartition::from_labels(&labels);
        let renamed = part.relabel(|id| 100 - id * offset % 97);
        let a = total_instance_loss(&y, &part, &cfg).unwrap();
        let b = total_instance_loss(&y, &renamed, &cfg).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
        prop_assert!(a.grad.max_abs_diff(&b.grad) < 1e-12);
    }

    #[test]
    fn pixel_permutation_within_frames_leaves_loss_unchanged(seed in 0u64..10_000) {
        // moving every video-pixel (embedding and label together) permutes
        // the set members but not the sets
        let mut r = rng(seed);
        let (y, labels) = random_embedding_case(&mut r, [2, 1, 3, 4]);
        let perm: Vec<usize> = (0..12).rev().collect();
        let mut y2 = y.clone();
        for c in 0..2 {
            for (to, &from) in perm.iter().enumerate() {
                y2.set(&[c, 0, to / 4, to % 4], y.at(&[c, 0, from / 4, from % 4]));
            }
        }
        let ids2 = perm.iter().map(|&from| labels[0].ids()[from]).collect();
        let labels2 = vec![InstanceLabelMap::new(3, 4, ids2)];
        let cfg = LossConfig::default();
        let a = total_instance_loss(&y, &InstancePartition::from_labels(&labels), &cfg).unwrap();
        let b = total_instance_loss(&y2, &InstancePartition::from_labels(&labels2), &cfg).unwrap();
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }
}

#[test]
fn windowed_loss_grows_with_window_for_drifting_embeddings() {
    let cfg = LossConfig::default();
    let t = 12;
    let labels: Vec<InstanceLabelMap> = (0..t).map(|_| InstanceLabelMap::new(1, 2, vec![1, 1])).collect();
    let y = Tensor::from_fn(&[1, t, 1, 2], |i| 0.25 * (i / 2) as f64).unwrap();
    let mut last = -1.0;
    for window in 1..=t {
        let l = windowed_attraction_loss(&y, &labels, window, &cfg).unwrap();
        assert!(l >= last);
        last = l;
    }
    assert!(last > 0.0);
}

#[test]
fn depth_gradient_matches_finite_differences_with_sum_reduction() {
    for seed in 0..4 {
        let mut r = rng(50 + seed);
        let mut case = random_geometry_case(&mut r, false);
        case.problem.config.reduction = Reduction::Sum;
        let depth = case.depth_map(&case.depth);
        let (_, grad) = case.problem.loss_and_grad(&depth).unwrap();
        let keep: Vec<usize> = (0..case.depth.len()).filter(|&i| !case.near_sampling_kink(i, 1e-3)).collect();
        let fd = central_diff(|x| case.problem.loss(&case.depth_map(x)).unwrap().value, &case.depth, 1e-5);
        let a: Vec<f64> = keep.iter().map(|&i| grad[i]).collect();
        let b: Vec<f64> = keep.iter().map(|&i| fd[i]).collect();
        assert!(rel_err(&a, &b) < 1e-3, "seed {seed}: {}", rel_err(&a, &b));
    }
}

#[test]
fn true_pose_beats_every_perturbed_pose() {
    let cam = CameraModel::new(40.0, 40.0, 23.5, 15.5).unwrap();
    let baseline = [0.3, 0.05, 0.0];
    let fx = plane_fixture(&cam, 4.0, baseline, 11, 32, 48).unwrap();
    let cfg = PhotometricConfig {
        auto_mask: false,
        smooth_weight: 0.0,
        ..PhotometricConfig::default()
    };
    let photometric = |pose: PoseSE3| {
        let vs = ViewSynthesis::new(
            fx.target.clone(),
            vec![SourceView {
                image: fx.source.clone(),
                pose,
            }],
            cam,
            cfg,
        )
        .unwrap();
        vs.loss(&fx.depth).unwrap().photometric
    };
    let best = photometric(fx.pose);
    for dx in [-0.1, -0.05, 0.0, 0.05, 0.1] {
        for dy in [-0.05, 0.0, 0.05] {
            for dz in [-0.2, 0.0, 0.2] {
                if dx == 0.0 && dy == 0.0 && dz == 0.0 {
                    continue;
                }
                let pose = PoseSE3::from_translation([baseline[0] + dx, baseline[1] + dy, baseline[2] + dz]);
                let err = photometric(pose);
                assert!(err > best, "perturbation ({dx}, {dy}, {dz}): {err} <= {best}");
            }
        }
    }
    for axis in 0..3 {
        let mut rotation = [0.0; 3];
        rotation[axis] = 0.02;
        assert!(photometric(PoseSE3::new(rotation, baseline)) > best);
    }
}
