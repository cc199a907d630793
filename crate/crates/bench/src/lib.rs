//! Inputs shared by the criterion benches under `benches/`.

use stembed_core::clustering_tracker::field_frame;
use stembed_core::synthetic_scenes::{oracle_embeddings, partial_occlusion_scene, render_sequence, SceneSpec};
use stembed_core::{InstanceLabelMap, LossConfig, Tensor};

/// The partial-occlusion scene: ten 64x96 frames with a `[dim, 10, 64, 96]`
/// oracle field.
pub fn occlusion_field(dim: usize, sigma: f64) -> (SceneSpec, Vec<InstanceLabelMap>, Vec<Vec<bool>>, Tensor<f64>) {
    let loss = LossConfig::default();
    let mut spec = partial_occlusion_scene(0, &loss, dim);
    if let Some(e) = spec.embedding.as_mut() {
        e.sigma = sigma;
    }
    let rendered = render_sequence(&spec).expect("scene renders");
    let field = oracle_embeddings(&rendered.labels, spec.embedding.as_ref().expect("oracle"), 0).expect("field");
    (spec, rendered.labels, rendered.predicted_masks, field)
}

/// Foreground embeddings of frame `t` as points.
pub fn foreground_points(field: &Tensor<f64>, mask: &[bool], t: usize) -> Vec<Vec<f64>> {
    let frame = field_frame(field, t).expect("frame in range");
    let p = frame.shape()[0];
    let plane = mask.len();
    (0..plane)
        .filter(|&i| mask[i])
        .map(|i| (0..p).map(|c| frame.data()[c * plane + i]).collect())
        .collect()
}

/// Deterministic smooth `[c, t, h, w]` input clip.
pub fn wave_clip(c: usize, t: usize, h: usize, w: usize) -> Tensor<f32> {
    Tensor::from_fn(&[c, t, h, w], |i| ((i as f32) * 0.618).sin()).expect("shape")
}
