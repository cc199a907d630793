//! Deterministic toy video sequences.
//!
//! Textured rectangles and discs move with constant image velocity in front
//! of a textured background plane. Each object sits at a fixed depth and the
//! nearest covering object wins every pixel. Camera translation shifts each
//! surface by its disparity `−f·t / depth`. Dropout events remove an object
//! from the predicted foreground masks while leaving ground truth intact.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_loss::LossConfig;
use crate::geometry::{CameraModel, DepthMap, GeometryError, Image, PoseSE3, MAX_DEPTH};
use crate::labels::InstanceLabelMap;
use crate::numerics::Tensor;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("no oracle mean for instance {0}")]
    MissingMean(u32),
    #[error("oracle embedding: {0}")]
    Oracle(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("scene json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Shape {
    Rect { height: f64, width: f64 },
    Disc { radius: f64 },
}

impl Shape {
    /// Whether the offset `(dr, dc)` from the centre lies inside.
    fn covers(&self, dr: f64, dc: f64) -> bool {
        match *self {
            Shape::Rect { height, width } => {
                dr >= -height / 2.0 && dr < height / 2.0 && dc >= -width / 2.0 && dc < width / 2.0
            }
            Shape::Disc { radius } => dr * dr + dc * dc <= radius * radius,
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            Shape::Rect { height, width } => height > 0.0 && width > 0.0,
            Shape::Disc { radius } => radius > 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneObject {
    pub id: u32,
    pub shape: Shape,
    /// Centre `(row, col)` at frame 0, in pixels.
    pub start: [f64; 2],
    /// `(row, col)` displacement per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    pub depth: f64,
    #[serde(default)]
    pub texture_seed: u64,
}

/// A missed detection: `object` is absent from the predicted mask at `frame`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dropout {
    pub frame: usize,
    pub object: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    #[serde(default)]
    pub objects: Vec<SceneObject>,
    /// Defaults to `fx = fy = width` with a centred principal point.
    #[serde(default)]
    pub camera: Option<CameraModel>,
    /// Camera pose per frame relative to frame 0; empty means static.
    /// Only translation is supported.
    #[serde(default)]
    pub poses: Vec<PoseSE3>,
    #[serde(default)]
    pub dropouts: Vec<Dropout>,
    #[serde(default = "default_background_depth")]
    pub background_depth: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub embedding: Option<OracleEmbeddingSpec>,
}

fn default_background_depth() -> f64 {
    60.0
}

impl SceneSpec {
    pub fn new(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            objects: Vec::new(),
            camera: None,
            poses: Vec::new(),
            dropouts: Vec::new(),
            background_depth: default_background_depth(),
            seed: 0,
            embedding: None,
        }
    }

    pub fn camera(&self) -> CameraModel {
        self.camera.unwrap_or(CameraModel {
            fx: self.width as f64,
            fy: self.width as f64,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height as f64 - 1.0) / 2.0,
        })
    }

    pub fn pose(&self, frame: usize) -> PoseSE3 {
        self.poses.get(frame).copied().unwrap_or_default()
    }

    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene specs always serialise")
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: String| Err(SceneError::Invalid(msg));
        if self.height == 0 || self.width == 0 {
            return bad(format!("empty image {}x{}", self.height, self.width));
        }
        if self.frames == 0 {
            return bad("at least one frame is required".into());
        }
        if let Some(cam) = self.camera {
            CameraModel::new(cam.fx, cam.fy, cam.cx, cam.cy)?;
        }
        if !(self.background_depth > 0.0 && self.background_depth <= MAX_DEPTH) {
            return bad(format!("background depth {} outside (0, {MAX_DEPTH}]", self.background_depth));
        }
        let mut ids = BTreeSet::new();
        let mut depths: Vec<f64> = Vec::new();
        for obj in &self.objects {
            if obj.id == 0 || obj.id >= 1000 {
                return bad(format!("object id {} outside 1..=999", obj.id));
            }
            if !ids.insert(obj.id) {
                return bad(format!("duplicate object id {}", obj.id));
            }
            if !obj.shape.is_valid() {
                return bad(format!("object {} has a degenerate shape", obj.id));
            }
            if !(obj.depth > 0.0 && obj.depth < self.background_depth) {
                return bad(format!(
                    "object {} depth {} must lie in (0, background depth)",
                    obj.id, obj.depth
                ));
            }
            if depths.contains(&obj.depth) {
                return bad(format!("object {} shares depth {} with another object", obj.id, obj.depth));
            }
            depths.push(obj.depth);
            if !(obj.start.iter().chain(&obj.velocity).all(|v| v.is_finite())) {
                return bad(format!("object {} has a non-finite position or velocity", obj.id));
            }
        }
        if !self.poses.is_empty() && self.poses.len() != self.frames {
            return bad(format!("{} poses for {} frames", self.poses.len(), self.frames));
        }
        for (t, pose) in self.poses.iter().enumerate() {
            if pose.rotation != [0.0; 3] {
                return bad(format!("pose {t} rotates; only translation is supported"));
            }
            let tz = pose.translation[2];
            if let Some(obj) = self.objects.iter().find(|o| o.depth - tz <= 0.0) {
                return bad(format!("pose {t} puts object {} behind the camera", obj.id));
            }
            if self.background_depth - tz <= 0.0 {
                return bad(format!("pose {t} puts the background behind the camera"));
            }
        }
        for d in &self.dropouts {
            if d.frame >= self.frames || !ids.contains(&d.object) {
                return bad(format!("dropout {d:?} names an unknown frame or object"));
            }
        }
        if let Some(emb) = &self.embedding {
            emb.validate()?;
        }
        Ok(())
    }
}

/// Lattice value noise with quintic interpolation, one independent lattice
/// per channel.
#[derive(Clone, Copy, Debug)]
pub struct ValueNoise {
    seed: u64,
    cell: f64,
}

impl ValueNoise {
    pub fn new(seed: u64, cell: f64) -> Self {
        assert!(cell > 0.0);
        Self { seed, cell }
    }

    fn lattice(&self, ix: i64, iy: i64, ch: usize) -> f64 {
        let mut z = self.seed
            ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
            ^ (ch as u64).wrapping_mul(0x1656_67B1_9E37_79F9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        (z >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Value in `[0, 1)` at continuous `(x, y)`.
    pub fn sample(&self, x: f64, y: f64, ch: usize) -> f64 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (x0, y0) = (gx.floor(), gy.floor());
        let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
        let (sx, sy) = (fade(gx - x0), fade(gy - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = self.lattice(ix, iy, ch) * (1.0 - sx) + self.lattice(ix + 1, iy, ch) * sx;
        let bottom = self.lattice(ix, iy + 1, ch) * (1.0 - sx) + self.lattice(ix + 1, iy + 1, ch) * sx;
        top * (1.0 - sy) + bottom * sy
    }
}

const OBJECT_TEXTURE_CELL: f64 = 6.0;
const BACKGROUND_TEXTURE_CELL: f64 = 12.0;

/// Per-object appearance: a base colour plus value noise in object
/// coordinates, so the texture travels with the object.
struct Appearance {
    base: [f64; 3],
    noise: ValueNoise,
}

impl Appearance {
    fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = [
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
            rng.random_range(0.2..0.8),
        ];
        Self {
            base,
            noise: ValueNoise::new(rng.random(), OBJECT_TEXTURE_CELL),
        }
    }

    fn colour(&self, dr: f64, dc: f64, ch: usize) -> f64 {
        (self.base[ch] + 0.4 * (self.noise.sample(dc, dr, ch) - 0.5)).clamp(0.0, 1.0)
    }
}

/// Everything [`render_sequence`] produces for one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedSequence {
    pub frames: Vec<Image>,
    pub labels: Vec<InstanceLabelMap>,
    pub depths: Vec<DepthMap>,
    /// Ground-truth foreground minus dropped detections.
    pub predicted_masks: Vec<Vec<bool>>,
    pub warnings: Vec<String>,
}

/// Centre `(row, col)` of `obj` in frame `t`, including camera disparity.
pub fn object_centre(spec: &SceneSpec, obj: &SceneObject, t: usize) -> [f64; 2] {
    let cam = spec.camera();
    let tr = spec.pose(t).translation;
    [
        obj.start[0] + t as f64 * obj.velocity[0] - cam.fy * tr[1] / obj.depth,
        obj.start[1] + t as f64 * obj.velocity[1] - cam.fx * tr[0] / obj.depth,
    ]
}

/// Id of the nearest object covering pixel `(row, col)` in frame `t`, with
/// its index in `spec.objects`.
fn front_object(spec: &SceneSpec, centres: &[[f64; 2]], row: usize, col: usize) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, (obj, c)) in spec.objects.iter().zip(centres).enumerate() {
        if obj.shape.covers(row as f64 - c[0], col as f64 - c[1])
            && best.is_none_or(|b| obj.depth < spec.objects[b].depth)
        {
            best = Some(k);
        }
    }
    best
}

pub fn render_sequence(spec: &SceneSpec) -> Result<RenderedSequence, SceneError> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let cam = spec.camera();
    let looks: Vec<Appearance> = spec
        .objects
        .iter()
        .map(|o| Appearance::new(o.texture_seed ^ spec.seed.rotate_left(17)))
        .collect();
    let background = ValueNoise::new(spec.seed ^ 0xB5C0_FBCF_EC4D_3B2F, BACKGROUND_TEXTURE_CELL);

    let mut out = RenderedSequence {
        frames: Vec::with_capacity(spec.frames),
        labels: Vec::with_capacity(spec.frames),
        depths: Vec::with_capacity(spec.frames),
        predicted_masks: Vec::with_capacity(spec.frames),
        warnings: Vec::new(),
    };
    let mut ever_visible = vec![false; spec.objects.len()];

    for t in 0..spec.frames {
        let tr = spec.pose(t).translation;
        let centres: Vec<[f64; 2]> = spec.objects.iter().map(|o| object_centre(spec, o, t)).collect();
        let bg_shift = [cam.fy * tr[1] / spec.background_depth, cam.fx * tr[0] / spec.background_depth];
        let mut labels = InstanceLabelMap::background(h, w);
        let mut depth = vec![spec.background_depth - tr[2]; h * w];
        let mut rgb = vec![0.0; h * w * 3];
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                match front_object(spec, &centres, row, col) {
                    Some(k) => {
                        let obj = &spec.objects[k];
                        ever_visible[k] = true;
                        labels.set(row, col, obj.id);
                        depth[i] = obj.depth - tr[2];
                        let (dr, dc) = (row as f64 - centres[k][0], col as f64 - centres[k][1]);
                        for ch in 0..3 {
                            rgb[i * 3 + ch] = looks[k].colour(dr, dc, ch);
                        }
                    }
                    None => {
                        let (y, x) = (row as f64 + bg_shift[0], col as f64 + bg_shift[1]);
                        for ch in 0..3 {
                            rgb[i * 3 + ch] = 0.15 + 0.5 * background.sample(x, y, ch);
                        }
                    }
                }
            }
        }
        let dropped: BTreeSet<u32> = spec
            .dropouts
            .iter()
            .filter(|d| d.frame == t)
            .map(|d| d.object)
            .collect();
        let predicted = labels.ids().iter().map(|&id| id != 0 && !dropped.contains(&id)).collect();
        out.frames.push(Image::new(h, w, 3, rgb)?);
        out.labels.push(labels);
        out.depths.push(DepthMap::new(h, w, depth)?);
        out.predicted_masks.push(predicted);
    }
    for (obj, seen) in spec.objects.iter().zip(ever_visible) {
        if !seen {
            let msg = format!("object {} is never visible", obj.id);
            log::warn!("{msg}");
            out.warnings.push(msg);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleInstance {
    pub id: u32,
    pub mean: Vec<f64>,
    /// Added to the mean once per frame; empty means no drift.
    #[serde(default)]
    pub drift: Vec<f64>,
}

/// Recipe for a synthetic embedding field: pixel `(t, h, w)` of instance `k`
/// gets `mean_k + t·drift_k + N(0, sigma²)` per component and background
/// pixels get the constant `background` in every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleEmbeddingSpec {
    pub dim: usize,
    pub instances: Vec<OracleInstance>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default = "default_sentinel")]
    pub background: f64,
}

fn default_sentinel() -> f64 {
    100.0
}

impl OracleEmbeddingSpec {
    /// Means spaced `3 rho_r` apart along the first axis, so every pair is at
    /// least `2 rho_r` apart and a noise-free field has zero attraction and
    /// repulsion loss.
    pub fn zero_loss(ids: &[u32], dim: usize, loss: &LossConfig) -> Self {
        assert!(dim >= 1);
        let spacing = 3.0 * loss.rho_r;
        let instances = ids
            .iter()
            .enumerate()
            .map(|(k, &id)| {
                let mut mean = vec![0.0; dim];
                mean[0] = spacing * k as f64;
                OracleInstance {
                    id,
                    mean,
                    drift: Vec::new(),
                }
            })
            .collect();
        Self {
            dim,
            instances,
            sigma: 0.0,
            background: default_sentinel(),
        }
    }

    /// Gives instance `k` a drift of norm `step` along axis `1 + k mod (dim−1)`,
    /// orthogonal to the axis the means are spread on.
    pub fn with_orthogonal_drift(mut self, step: f64) -> Self {
        let dim = self.dim;
        for (k, inst) in self.instances.iter_mut().enumerate() {
            let mut drift = vec![0.0; dim];
            if dim > 1 {
                drift[1 + k % (dim - 1)] = step;
            } else {
                drift[0] = step;
            }
            inst.drift = drift;
        }
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.dim == 0 {
            return Err(SceneError::Oracle("embedding dimension must be positive".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(SceneError::Oracle(format!("sigma {} must be finite and non-negative", self.sigma)));
        }
        for inst in &self.instances {
            if inst.mean.len() != self.dim || !(inst.drift.is_empty() || inst.drift.len() == self.dim) {
                return Err(SceneError::Oracle(format!(
                    "instance {} vectors do not have dimension {}",
                    inst.id, self.dim
                )));
            }
        }
        Ok(())
    }

    /// Smallest pairwise distance between the frame-0 means.
    pub fn min_separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.instances.iter().enumerate() {
            for b in &self.instances[i + 1..] {
                let d = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                best = best.min(d);
            }
        }
        best
    }
}

/// Builds the `[p, T, H, W]` oracle field for a label sequence.
pub fn oracle_embeddings(
    labels: &[InstanceLabelMap],
    ospec: &OracleEmbeddingSpec,
    seed: u64,
) -> Result<Tensor<f64>, SceneError> {
    ospec.validate()?;
    let Some(first) = labels.first() else {
        return Err(SceneError::Oracle("no frames".into()));
    };
    let (h, w, frames, p) = (first.height(), first.width(), labels.len(), ospec.dim);
    if labels.iter().any(|l| l.height() != h || l.width() != w) {
        return Err(SceneError::Oracle("label maps differ in size".into()));
    }
    let plane = h * w;
    let mut data = vec![0.0; p * frames * plane];
    let noise = Normal::new(0.0, ospec.sigma).expect("sigma validated");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (t, map) in labels.iter().enumerate() {
        for (i, &id) in map.ids().iter().enumerate() {
            let base = t * plane + i;
            if id == 0 {
                for c in 0..p {
                    data[c * frames * plane + base] = ospec.background;
                }
                continue;
            }
            let inst = ospec
                .instances
                .iter()
                .find(|k| k.id == id)
                .ok_or(SceneError::MissingMean(id))?;
            for c in 0..p {
                let drift = inst.drift.get(c).copied().unwrap_or(0.0);
                let mut v = inst.mean[c] + t as f64 * drift;
                if ospec.sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                data[c * frames * plane + base] = v;
            }
        }
    }
    Ok(Tensor::new(vec![p, frames, h, w], data).expect("sizes agree"))
}

/// Two views of a textured fronto-parallel plane.
#[derive(Clone, Debug)]
pub struct PlaneFixture {
    pub target: Image,
    pub source: Image,
    /// Target-to-source transform.
    pub pose: PoseSE3,
    pub depth: DepthMap,
}

pub const PLANE_TEXTURE_CELL: f64 = 20.0;

/// Renders the plane `z = depth` seen from the target camera and from a
/// source camera whose coordinates are `x_s = x_t + baseline`. The texture is
/// value noise laid out in target pixel coordinates.
pub fn plane_fixture(
    cam: &CameraModel,
    depth: f64,
    baseline: [f64; 3],
    seed: u64,
    height: usize,
    width: usize,
) -> Result<PlaneFixture, SceneError> {
    if !(depth > 0.0) || depth + baseline[2] <= 0.0 {
        return Err(SceneError::Invalid(format!("plane depth {depth} must be positive in both views")));
    }
    let noise = ValueNoise::new(seed, PLANE_TEXTURE_CELL);
    let texture = |x: f64, y: f64, ch: usize| {
        let (u, v) = (cam.cx + cam.fx * x / depth, cam.cy + cam.fy * y / depth);
        0.2 + 0.6 * noise.sample(u, v, ch)
    };
    let target = Image::from_fn(height, width, 3, |r, c, ch| {
        let ray = cam.ray(c as f64, r as f64);
        texture(ray.x * depth, ray.y * depth, ch)
    });
    let source_depth = depth + baseline[2];
    let source = Image::from_fn(height, width, 3, |r, c, ch| {
        let ray = cam.ray(c as f64, r as f64);
        texture(ray.x * source_depth - baseline[0], ray.y * source_depth - baseline[1], ch)
    });
    Ok(PlaneFixture {
        target,
        source,
        pose: PoseSE3::from_translation(baseline),
        depth: DepthMap::constant(height, width, depth)?,
    })
}

/// Per-frame drift used by the occlusion scenarios, as a fraction of `rho_r`.
pub const SCENARIO_DRIFT: f64 = 0.2;
/// Within-instance noise of the occlusion scenarios, as a fraction of `rho_a`.
pub const SCENARIO_SIGMA: f64 = 0.1;

fn with_oracle(mut spec: SceneSpec, loss: &LossConfig, dim: usize) -> SceneSpec {
    let ids: Vec<u32> = spec.objects.iter().map(|o| o.id).collect();
    spec.embedding = Some(
        OracleEmbeddingSpec::zero_loss(&ids, dim, loss)
            .with_orthogonal_drift(SCENARIO_DRIFT * loss.rho_r)
            .with_sigma(SCENARIO_SIGMA * loss.rho_a),
    );
    spec
}

fn rect(id: u32, size: [f64; 2], start: [f64; 2], velocity: [f64; 2], depth: f64) -> SceneObject {
    SceneObject {
        id,
        shape: Shape::Rect {
            height: size[0],
            width: size[1],
        },
        start,
        velocity,
        depth,
        texture_seed: id as u64 * 7919,
    }
}

/// A near rectangle slides across half of a farther disc, covering part of
/// it for several frames.
pub fn partial_occlusion_scene(seed: u64, loss: &LossConfig, dim: usize) -> SceneSpec {
    let mut spec = SceneSpec::new(64, 96, 10);
    spec.seed = seed;
    spec.objects = vec![
        SceneObject {
            id: 1,
            shape: Shape::Disc { radius: 12.0 },
            start: [30.0, 48.0],
            velocity: [0.0, 0.0],
            depth: 20.0,
            texture_seed: 11,
        },
        rect(2, [14.0, 18.0], [24.0, 10.0], [0.0, 5.0], 10.0),
        rect(3, [12.0, 16.0], [52.0, 80.0], [0.0, -1.5], 30.0),
    ];
    with_oracle(spec, loss, dim)
}

/// Three objects tracked through noisy detections: one object is missing
/// from the predicted masks in two non-adjacent frames.
pub fn missed_detection_scene(seed: u64, loss: &LossConfig, dim: usize) -> SceneSpec {
    let mut spec = SceneSpec::new(64, 96, 10);
    spec.seed = seed;
    spec.objects = vec![
        rect(1, [14.0, 14.0], [16.0, 12.0], [0.5, 3.0], 15.0),
        SceneObject {
            id: 2,
            shape: Shape::Disc { radius: 9.0 },
            start: [44.0, 70.0],
            velocity: [-0.5, -2.0],
            depth: 25.0,
            texture_seed: 5,
        },
        rect(3, [10.0, 20.0], [50.0, 20.0], [0.0, 1.0], 35.0),
    ];
    spec.dropouts = vec![Dropout { frame: 3, object: 2 }, Dropout { frame: 6, object: 2 }];
    with_oracle(spec, loss, dim)
}

/// A large near rectangle passes completely in front of a small far one,
/// hiding it for two frames before it re-emerges on the other side.
pub fn total_occlusion_scene(seed: u64, loss: &LossConfig, dim: usize) -> SceneSpec {
    let mut spec = SceneSpec::new(64, 96, 10);
    spec.seed = seed;
    spec.objects = vec![
        rect(1, [12.0, 12.0], [32.0, 40.0], [0.0, 1.0], 30.0),
        rect(2, [24.0, 28.0], [32.0, 4.0], [0.0, 8.0], 10.0),
    ];
    with_oracle(spec, loss, dim)
}

/// The three occlusion scenarios, named.
pub fn occlusion_scenarios(seed: u64, loss: &LossConfig, dim: usize) -> Vec<(&'static str, SceneSpec)> {
    vec![
        ("partial occlusion", partial_occlusion_scene(seed, loss, dim)),
        ("missed detection", missed_detection_scene(seed, loss, dim)),
        ("total occlusion", total_occlusion_scene(seed, loss, dim)),
    ]
}
