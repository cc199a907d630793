mod common;

use common::*;
use rand::Rng;
use stembed_core::clustering_tracker::{
    match_clusters, mean_shift_cluster, track_sequence, Assignment, Tracker, TrackerConfig,
};
use stembed_core::mots_metrics::evaluate_label_maps;
use stembed_core::synthetic_scenes::{oracle_embeddings, render_sequence, OracleEmbeddingSpec, SceneObject, SceneSpec, Shape};
use stembed_core::{LossConfig, Tensor};

/// `[p, 1, w]` frame where pixel `i` carries `points[i]`, or background.
fn row_frame(p: usize, points: &[Option<Vec<f64>>]) -> (Tensor<f64>, Vec<bool>) {
    let w = points.len();
    let t = Tensor::from_fn(&[p, 1, w], |k| points[k % w].as_ref().map_or(0.0, |e| e[k / w])).unwrap();
    (t, points.iter().map(Option::is_some).collect())
}

fn blob(r: &mut rand_chacha::ChaCha8Rng, centre: &[f64], n: usize, spread: f64) -> Vec<Option<Vec<f64>>> {
    (0..n)
        .map(|_| Some(centre.iter().map(|c| c + r.random_range(-spread..spread)).collect()))
        .collect()
}

#[test]
fn mean_shift_separates_distant_blobs_and_assigns_every_point() {
    let mut r = rng(1);
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for centre in [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]] {
        pts.extend(blob(&mut r, &centre, 40, 0.2).into_iter().flatten());
    }
    let res = mean_shift_cluster(&pts, 0.5, 3).unwrap();
    assert_eq!(res.num_clusters(), 3);
    assert!(res.assignments.iter().all(Option::is_some));
    for b in 0..3 {
        let c = res.assignments[b * 40];
        assert!(res.assignments[b * 40..(b + 1) * 40].iter().all(|a| *a == c));
    }
}

#[test]
fn tracking_is_deterministic() {
    let loss = LossConfig::default();
    let mut spec = SceneSpec::new(24, 32, 6);
    for (k, col) in [(1u32, 6.0), (2, 24.0)] {
        spec.objects.push(SceneObject {
            id: k,
            shape: Shape::Disc { radius: 5.0 },
            start: [12.0, col],
            velocity: [0.0, if k == 1 { 1.5 } else { -1.5 }],
            depth: 5.0 * k as f64,
            texture_seed: k as u64,
        });
    }
    let rendered = render_sequence(&spec).unwrap();
    let ospec = OracleEmbeddingSpec::zero_loss(&[1, 2], 4, &loss).with_sigma(0.1);
    let field = oracle_embeddings(&rendered.labels, &ospec, 9).unwrap();
    let cfg = TrackerConfig::default();
    let a = track_sequence(&field, &rendered.predicted_masks, &loss, &cfg).unwrap();
    let b = track_sequence(&field, &rendered.predicted_masks, &loss, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_loss_fields_are_tracked_perfectly() {
    let loss = LossConfig::default();
    for seed in 0..4 {
        let mut r = rng(40 + seed);
        let mut spec = SceneSpec::new(32, 40, 8);
        spec.seed = seed;
        for k in 1..=3u32 {
            spec.objects.push(SceneObject {
                id: k,
                shape: Shape::Rect {
                    height: r.random_range(6.0..10.0),
                    width: r.random_range(6.0..10.0),
                },
                start: [r.random_range(6.0..26.0), r.random_range(6.0..34.0)],
                velocity: [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                depth: 4.0 * k as f64,
                texture_seed: seed * 10 + k as u64,
            });
        }
        let rendered = render_sequence(&spec).unwrap();
        let field = zero_loss_field(&rendered.labels, 8, &loss, &mut r);
        let pred = track_sequence(&field, &rendered.predicted_masks, &loss, &TrackerConfig::default()).unwrap();
        let report = evaluate_label_maps(&rendered.labels, &pred, 0.5).unwrap();
        assert_eq!((report.fp, report.fn_, report.ids), (0, 0, 0), "seed {seed}");
        let gt: Vec<u32> = rendered.labels.iter().flat_map(|l| l.ids().to_vec()).collect();
        let got: Vec<u32> = pred.iter().flat_map(|l| l.ids().to_vec()).collect();
        assert!(equal_up_to_permutation(&gt, &got));
    }
}

#[test]
fn ids_survive_gaps_shorter_than_the_life_span() {
    let loss = LossConfig::default();
    let cfg = TrackerConfig {
        life_span: 3,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(loss, cfg).unwrap();
    let mut r = rng(5);
    let centre = [1.0, -2.0];
    let seen = |r: &mut rand_chacha::ChaCha8Rng| row_frame(2, &blob(r, &centre, 6, 0.1));
    let empty = row_frame(2, &vec![None; 6]);

    let (f, m) = seen(&mut r);
    let first = tracker.segment(&f, &m).unwrap().ids()[0];
    for _ in 0..2 {
        tracker.segment(&empty.0, &empty.1).unwrap();
    }
    // back at frame 3: the frame-0 members are exactly life_span old
    let (f, m) = seen(&mut r);
    assert_eq!(tracker.segment(&f, &m).unwrap().ids()[0], first);
}

#[test]
fn tracks_are_purged_after_the_life_span() {
    let loss = LossConfig::default();
    let cfg = TrackerConfig {
        life_span: 3,
        ..TrackerConfig::default()
    };
    let mut tracker = Tracker::new(loss, cfg).unwrap();
    let mut r = rng(6);
    let (f, m) = row_frame(2, &blob(&mut r, &[0.0, 0.0], 6, 0.1));
    let first = tracker.segment(&f, &m).unwrap().ids()[0];
    let empty = row_frame(2, &vec![None; 6]);
    for step in 1..=4 {
        tracker.segment(&empty.0, &empty.1).unwrap();
        let alive = tracker.store.tracks().contains_key(&first);
        assert_eq!(alive, step <= 3, "after {step} empty frames");
    }
    let (f, m) = row_frame(2, &blob(&mut r, &[0.0, 0.0], 6, 0.1));
    let again = tracker.segment(&f, &m).unwrap().ids()[0];
    assert_ne!(again, first, "ids are never reused");
}

#[test]
fn matching_is_greedy_nearest_first_within_the_repulsion_margin() {
    let loss = LossConfig::default();
    let mut tracker = Tracker::new(loss, TrackerConfig::default()).unwrap();
    let mut pts = vec![Some(vec![0.0, 0.0]); 3];
    pts.extend(vec![Some(vec![4.0, 0.0]); 3]);
    let (f, m) = row_frame(2, &pts);
    let labels = tracker.segment(&f, &m).unwrap();
    let (a, b) = (labels.ids()[0], labels.ids()[3]);
    assert_ne!(a, b);

    let means = vec![vec![0.5, 0.0], vec![0.2, 0.0], vec![4.0, 1.4], vec![4.0, 1.6]];
    let got = match_clusters(&means, &tracker.store, loss.rho_r);
    // the closer cluster wins the contested track; 1.6 is outside rho_r
    assert_eq!(
        got,
        vec![Assignment::Fresh, Assignment::Track(a), Assignment::Track(b), Assignment::Fresh]
    );
}
