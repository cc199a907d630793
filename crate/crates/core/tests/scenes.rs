mod common;

use common::*;
use rand::Rng;
use stembed_core::geometry::PoseSE3;
use stembed_core::io::{load_id_map, load_mask, load_pfm, load_ppm, save_id_map, save_mask, save_pfm, save_ppm};
use stembed_core::synthetic_scenes::{occlusion_scenarios, render_sequence, Dropout, SceneObject, SceneSpec, Shape};
use stembed_core::LossConfig;

fn random_spec(seed: u64, with_poses: bool) -> SceneSpec {
    let mut r = rng(seed);
    let mut spec = SceneSpec::new(r.random_range(12..30), r.random_range(12..40), r.random_range(1..6));
    spec.seed = seed;
    let n = r.random_range(1..5u32);
    for k in 1..=n {
        let shape = if r.random_bool(0.5) {
            Shape::Rect {
                height: r.random_range(2.0..12.0),
                width: r.random_range(2.0..12.0),
            }
        } else {
            Shape::Disc {
                radius: r.random_range(1.5..7.0),
            }
        };
        spec.objects.push(SceneObject {
            id: k * 3,
            shape,
            start: [r.random_range(0.0..spec.height as f64), r.random_range(0.0..spec.width as f64)],
            velocity: [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)],
            depth: 2.0 + k as f64 * 1.5,
            texture_seed: r.random(),
        });
    }
    if with_poses {
        spec.poses = (0..spec.frames)
            .map(|t| PoseSE3::from_translation([0.05 * t as f64, -0.03 * t as f64, 0.0]))
            .collect();
    }
    spec
}

#[test]
fn renderer_labels_match_painter_oracle() {
    for seed in 0..60 {
        let spec = random_spec(seed, seed % 2 == 1);
        let out = render_sequence(&spec).unwrap();
        assert_eq!(out.labels.len(), spec.frames);
        for t in 0..spec.frames {
            assert_eq!(out.labels[t].ids(), painter_oracle(&spec, t).as_slice(), "seed {seed} frame {t}");
        }
    }
}

#[test]
fn nearer_object_wins_where_rectangles_cross() {
    let mut spec = SceneSpec::new(20, 40, 5);
    for (id, col, v, depth) in [(1, 6.0, 4.0, 9.0), (2, 34.0, -4.0, 3.0)] {
        spec.objects.push(SceneObject {
            id,
            shape: Shape::Rect { height: 8.0, width: 8.0 },
            start: [10.0, col],
            velocity: [0.0, v],
            depth,
            texture_seed: id as u64,
        });
    }
    let out = render_sequence(&spec).unwrap();
    // frame 3: centres at 18 and 22 overlap; object 2 is nearer
    let crossing = &out.labels[3];
    assert_eq!(crossing.get(10, 20), 2);
    assert!(crossing.ids().contains(&1));
    for t in 0..5 {
        assert_eq!(out.labels[t].ids(), painter_oracle(&spec, t).as_slice());
        for i in 0..20 * 40 {
            let expected = match out.labels[t].ids()[i] {
                0 => spec.background_depth,
                id => spec.objects[id as usize - 1].depth,
            };
            assert_eq!(out.depths[t].values()[i], expected);
        }
    }
}

#[test]
fn rendering_is_deterministic_and_seed_dependent() {
    let spec = random_spec(3, true);
    assert_eq!(render_sequence(&spec).unwrap(), render_sequence(&spec).unwrap());
    let mut other = spec.clone();
    other.seed += 1;
    let (a, b) = (render_sequence(&spec).unwrap(), render_sequence(&other).unwrap());
    assert_eq!(a.labels, b.labels);
    if a.labels[0].ids().iter().any(|&id| id != 0) {
        assert_ne!(a.frames, b.frames);
    }
}

#[test]
fn dropouts_only_remove_the_named_object() {
    let mut spec = random_spec(11, false);
    spec.frames = 3;
    let id = spec.objects[0].id;
    spec.dropouts.push(Dropout { frame: 1, object: id });
    let out = render_sequence(&spec).unwrap();
    for t in 0..3 {
        for (i, &gt) in out.labels[t].ids().iter().enumerate() {
            let expect = gt != 0 && !(t == 1 && gt == id);
            assert_eq!(out.predicted_masks[t][i], expect);
        }
    }
}

#[test]
fn rendered_outputs_survive_a_disk_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = render_sequence(&random_spec(21, true)).unwrap();
    for t in 0..out.frames.len() {
        let path = |name: &str| dir.path().join(format!("{name}_{t:04}"));
        save_ppm(&path("frame"), &out.frames[t]).unwrap();
        save_id_map(&path("label"), &out.labels[t]).unwrap();
        save_pfm(&path("depth"), &out.depths[t]).unwrap();
        let (h, w) = (out.labels[t].height(), out.labels[t].width());
        save_mask(&path("mask"), h, w, &out.predicted_masks[t]).unwrap();

        let img = load_ppm(&path("frame")).unwrap();
        let err = img.data().iter().zip(out.frames[t].data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 0.5 / 255.0 + 1e-12);
        assert_eq!(load_id_map(&path("label")).unwrap(), out.labels[t]);
        let depth = load_pfm(&path("depth")).unwrap();
        for (a, b) in depth.values().iter().zip(out.depths[t].values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        assert_eq!(load_mask(&path("mask")).unwrap(), (h, w, out.predicted_masks[t].clone()));
    }
}

#[test]
fn scene_manifests_round_trip_through_json() {
    let loss = LossConfig::default();
    for (name, spec) in occlusion_scenarios(4, &loss, 8) {
        let back = SceneSpec::from_json(&spec.to_json()).unwrap();
        assert_eq!(back, spec, "{name}");
    }
    let spec = random_spec(8, true);
    assert_eq!(SceneSpec::from_json(&spec.to_json()).unwrap(), spec);
}

#[test]
fn invalid_manifests_are_rejected() {
    let mut spec = random_spec(2, false);
    spec.objects.push(SceneObject {
        depth: spec.objects[0].depth,
        id: 999,
        ..spec.objects[0].clone()
    });
    assert!(render_sequence(&spec).is_err());
    assert!(SceneSpec::from_json(r#"{"height": 4, "width": 4, "frames": 1, "colour": 3}"#).is_err());
}
