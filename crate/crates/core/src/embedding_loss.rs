//! Three-force spatio-temporal embedding loss.
//!
//! Pixel embeddings of one instance are pulled within `rho_a` of their mean
//! (attraction), instance means are pushed at least `2 * rho_r` apart
//! (repulsion) and kept near the origin (regularisation). All sums run over
//! video-pixels, i.e. over the whole `(T, H, W)` block at once, and gradients
//! are propagated through the instance means into every member pixel.
//!
//! The embedding field is a `Tensor<f64>` of shape `[p, T, H, W]`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labels::{InstanceLabelMap, VideoPixel};
use crate::numerics::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("embedding field must have shape [p, T, H, W], got {0:?}")]
    BadFieldShape(Vec<usize>),
    #[error("instance {0} has no pixels")]
    EmptyInstance(u32),
    #[error("instance {id} pixel {pixel:?} lies outside the field extents {extents:?}")]
    OutOfBounds {
        id: u32,
        pixel: VideoPixel,
        extents: [usize; 3],
    },
    #[error("pixel {0:?} belongs to more than one instance")]
    Overlap(VideoPixel),
    #[error("instance id 0 is reserved for background")]
    BackgroundId,
    #[error("means for instance {0} are missing or have the wrong dimension")]
    InconsistentMeans(u32),
    #[error("window length {window} is invalid for a sequence of {frames} frames")]
    BadWindow { window: usize, frames: usize },
    #[error("label maps do not match the field extents")]
    LabelShape,
}

/// Radii and weights of the instance embedding loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub rho_a: f64,
    pub rho_r: f64,
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub lambda_reg: f64,
    /// Weight of the view-synthesis depth loss.
    pub lambda_vs: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho_a: 0.5,
            rho_r: 1.5,
            lambda_a: 1.0,
            lambda_r: 1.0,
            lambda_reg: 0.001,
            lambda_vs: 1.0,
        }
    }
}

impl LossConfig {
    /// True when `rho_r > 2 rho_a`, the regime in which a zero attraction and
    /// repulsion loss implies every pixel is nearer its own instance than any
    /// other.
    pub fn separates(&self) -> bool {
        self.rho_r > 2.0 * self.rho_a
    }
}

/// Instance id to member video-pixels, background excluded.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct InstancePartition {
    sets: BTreeMap<u32, Vec<VideoPixel>>,
}

impl InstancePartition {
    /// Collects `S_k` from a sequence of label maps; frame `t` of the
    /// sequence is video-pixel time `t`.
    pub fn from_labels(labels: &[InstanceLabelMap]) -> Self {
        let mut sets: BTreeMap<u32, Vec<VideoPixel>> = BTreeMap::new();
        for (t, map) in labels.iter().enumerate() {
            for h in 0..map.height() {
                for w in 0..map.width() {
                    let id = map.get(h, w);
                    if id != 0 {
                        sets.entry(id).or_default().push(VideoPixel::new(t, h, w));
                    }
                }
            }
        }
        Self { sets }
    }

    pub fn from_sets(sets: BTreeMap<u32, Vec<VideoPixel>>) -> Result<Self, LossError> {
        let mut seen = BTreeSet::new();
        for (&id, pixels) in &sets {
            if id == 0 {
                return Err(LossError::BackgroundId);
            }
            for &px in pixels {
                if !seen.insert(px) {
                    return Err(LossError::Overlap(px));
                }
            }
        }
        Ok(Self { sets })
    }

    pub fn sets(&self) -> &BTreeMap<u32, Vec<VideoPixel>> {
        &self.sets
    }

    pub fn num_instances(&self) -> usize {
        self.sets.len()
    }

    /// Restriction to frames `start..start + len`, re-indexed to start at 0.
    /// Instances absent from the window are dropped.
    pub fn window(&self, start: usize, len: usize) -> Self {
        let sets = self
            .sets
            .iter()
            .filter_map(|(&id, pixels)| {
                let kept: Vec<VideoPixel> = pixels
                    .iter()
                    .filter(|p| p.t >= start && p.t < start + len)
                    .map(|p| VideoPixel::new(p.t - start, p.h, p.w))
                    .collect();
                (!kept.is_empty()).then_some((id, kept))
            })
            .collect();
        Self { sets }
    }

    /// Applies `f` to every instance id. `f` must be injective.
    pub fn relabel(&self, f: impl Fn(u32) -> u32) -> Self {
        Self {
            sets: self.sets.iter().map(|(&id, px)| (f(id), px.clone())).collect(),
        }
    }
}

/// Mean embedding `mu_k` of every instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMeans {
    dim: usize,
    means: BTreeMap<u32, Vec<f64>>,
}

impl InstanceMeans {
    pub fn new(dim: usize, means: BTreeMap<u32, Vec<f64>>) -> Result<Self, LossError> {
        for (&id, m) in &means {
            if m.len() != dim {
                return Err(LossError::InconsistentMeans(id));
            }
        }
        Ok(Self { dim, means })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.means.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, &[f64])> {
        self.means.iter().map(|(&id, m)| (id, m.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}

/// Loss value plus a flag raised when there were no instances to average
/// over (the value is then 0).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub no_instances: bool,
}

impl LossValue {
    fn empty() -> Self {
        Self {
            value: 0.0,
            no_instances: true,
        }
    }

    fn of(value: f64) -> Self {
        Self {
            value,
            no_instances: false,
        }
    }
}

/// Extents `(p, T, H, W)` of a well-formed field.
pub(crate) fn field_dims(y: &Tensor<f64>) -> Result<[usize; 4], LossError> {
    match *y.shape() {
        [p, t, h, w] => Ok([p, t, h, w]),
        _ => Err(LossError::BadFieldShape(y.shape().to_vec())),
    }
}

struct FieldView<'a> {
    data: &'a [f64],
    dim: usize,
    stride: usize,
    t: usize,
    h: usize,
    w: usize,
}

impl<'a> FieldView<'a> {
    fn new(y: &'a Tensor<f64>) -> Result<Self, LossError> {
        let [p, t, h, w] = field_dims(y)?;
        Ok(Self {
            data: y.data(),
            dim: p,
            stride: t * h * w,
            t,
            h,
            w,
        })
    }

    fn base(&self, px: VideoPixel) -> usize {
        (px.t * self.h + px.h) * self.w + px.w
    }

    fn embedding(&self, px: VideoPixel, out: &mut [f64]) {
        let base = self.base(px);
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.data[c * self.stride + base];
        }
    }

    fn check(&self, part: &InstancePartition) -> Result<(), LossError> {
        for (&id, pixels) in part.sets() {
            if pixels.is_empty() {
                return Err(LossError::EmptyInstance(id));
            }
            for &px in pixels {
                if px.t >= self.t || px.h >= self.h || px.w >= self.w {
                    return Err(LossError::OutOfBounds {
                        id,
                        pixel: px,
                        extents: [self.t, self.h, self.w],
                    });
                }
            }
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Arithmetic mean embedding of every instance.
pub fn compute_means(y: &Tensor<f64>, part: &InstancePartition) -> Result<InstanceMeans, LossError> {
    let view = FieldView::new(y)?;
    view.check(part)?;
    let mut means = BTreeMap::new();
    let mut e = vec![0.0; view.dim];
    for (&id, pixels) in part.sets() {
        let mut acc = vec![0.0; view.dim];
        for &px in pixels {
            view.embedding(px, &mut e);
            for (a, v) in acc.iter_mut().zip(&e) {
                *a += v;
            }
        }
        let n = pixels.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        means.insert(id, acc);
    }
    InstanceMeans::new(view.dim, means)
}

fn check_means(part: &InstancePartition, means: &InstanceMeans, dim: usize) -> Result<(), LossError> {
    for &id in part.sets().keys() {
        match means.get(id) {
            Some(m) if m.len() == dim => {}
            _ => return Err(LossError::InconsistentMeans(id)),
        }
    }
    Ok(())
}

/// Mean over instances of the mean squared hinge `max(0, ‖mu_k − y_i‖ − rho_a)²`.
pub fn attraction_loss(
    y: &Tensor<f64>,
    part: &InstancePartition,
    means: &InstanceMeans,
    cfg: &LossConfig,
) -> Result<LossValue, LossError> {
    let view = FieldView::new(y)?;
    view.check(part)?;
    check_means(part, means, view.dim)?;
    if part.num_instances() == 0 {
        return Ok(LossValue::empty());
    }
    let mut e = vec![0.0; view.dim];
    let mut total = 0.0;
    for (&id, pixels) in part.sets() {
        let mu = means.get(id).expect("checked above");
        let mut acc = 0.0;
        for &px in pixels {
            view.embedding(px, &mut e);
            let hinge = (dist(mu, &e) - cfg.rho_a).max(0.0);
            acc += hinge * hinge;
        }
        total += acc / pixels.len() as f64;
    }
    Ok(LossValue::of(total / part.num_instances() as f64))
}

/// Squared hinge `max(0, 2 rho_r − ‖mu_a − mu_b‖)²` averaged over ordered
/// pairs of distinct instances (both `(a, b)` and `(b, a)` are counted, which
/// is what the `K(K − 1)` normaliser implies).
pub fn repulsion_loss(means: &InstanceMeans, cfg: &LossConfig) -> LossValue {
    let k = means.len();
    if k == 0 {
        return LossValue::empty();
    }
    if k < 2 {
        return LossValue::of(0.0);
    }
    let all: Vec<&[f64]> = means.iter().map(|(_, m)| m).collect();
    let mut total = 0.0;
    for (a, ma) in all.iter().enumerate() {
        for (b, mb) in all.iter().enumerate() {
            if a != b {
                let hinge = (2.0 * cfg.rho_r - dist(ma, mb)).max(0.0);
                total += hinge * hinge;
            }
        }
    }
    LossValue::of(total / (k * (k - 1)) as f64)
}

/// Mean Euclidean norm of the instance means.
pub fn regularisation_loss(means: &InstanceMeans) -> LossValue {
    if means.is_empty() {
        return LossValue::empty();
    }
    let total: f64 = means.iter().map(|(_, m)| norm(m)).sum();
    LossValue::of(total / means.len() as f64)
}

/// Per-term weights used when assembling a loss and its gradient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TermWeights {
    pub attraction: f64,
    pub repulsion: f64,
    pub regularisation: f64,
}

impl TermWeights {
    pub const ATTRACTION: Self = Self {
        attraction: 1.0,
        repulsion: 0.0,
        regularisation: 0.0,
    };
    pub const REPULSION: Self = Self {
        attraction: 0.0,
        repulsion: 1.0,
        regularisation: 0.0,
    };
    pub const REGULARISATION: Self = Self {
        attraction: 0.0,
        repulsion: 0.0,
        regularisation: 1.0,
    };

    pub fn from_config(cfg: &LossConfig) -> Self {
        Self {
            attraction: cfg.lambda_a,
            repulsion: cfg.lambda_r,
            regularisation: cfg.lambda_reg,
        }
    }
}

/// Loss terms and the gradient of their weighted sum with respect to the
/// embedding field.
#[derive(Clone, Debug)]
pub struct InstanceLoss {
    pub total: f64,
    pub attraction: f64,
    pub repulsion: f64,
    pub regularisation: f64,
    pub no_instances: bool,
    pub grad: Tensor<f64>,
}

/// `lambda_a L_a + lambda_r L_r + lambda_reg L_reg` with its analytic gradient.
pub fn total_instance_loss(
    y: &Tensor<f64>,
    part: &InstancePartition,
    cfg: &LossConfig,
) -> Result<InstanceLoss, LossError> {
    weighted_instance_loss(y, part, cfg, TermWeights::from_config(cfg))
}

/// Weighted instance loss and gradient for arbitrary term weights; used to
/// check each term's gradient in isolation.
///
/// Where a distance is exactly zero inside an active hinge (coincident
/// means, or a mean at the origin for the regulariser) the zero subgradient
/// is used.
pub fn weighted_instance_loss(
    y: &Tensor<f64>,
    part: &InstancePartition,
    cfg: &LossConfig,
    weights: TermWeights,
) -> Result<InstanceLoss, LossError> {
    let means = compute_means(y, part)?;
    let view = FieldView::new(y)?;
    let k = part.num_instances();
    let mut grad = vec![0.0; y.len()];
    if k == 0 {
        return Ok(InstanceLoss {
            total: 0.0,
            attraction: 0.0,
            repulsion: 0.0,
            regularisation: 0.0,
            no_instances: true,
            grad: Tensor::new(y.shape().to_vec(), grad).expect("same shape"),
        });
    }
    let dim = view.dim;
    let kf = k as f64;
    let ids: Vec<u32> = part.sets().keys().copied().collect();
    // d(weighted loss)/d(mu_k), accumulated from all three terms.
    let mut mean_grads: Vec<Vec<f64>> = vec![vec![0.0; dim]; k];

    let mut attraction = 0.0;
    let mut e = vec![0.0; dim];
    for (slot, &id) in ids.iter().enumerate() {
        let pixels = &part.sets()[&id];
        let mu = means.get(id).expect("computed above");
        let n = pixels.len() as f64;
        let mut acc = 0.0;
        for &px in pixels {
            view.embedding(px, &mut e);
            let d = dist(mu, &e);
            let hinge = d - cfg.rho_a;
            if hinge <= 0.0 {
                continue;
            }
            acc += hinge * hinge;
            // d/dy_i of hinge² = 2 hinge (y_i − mu)/d, scaled by 1/(K n)
            let scale = weights.attraction * 2.0 * hinge / (d * kf * n);
            let base = view.base(px);
            for c in 0..dim {
                let diff = e[c] - mu[c];
                grad[c * view.stride + base] += scale * diff;
                mean_grads[slot][c] -= scale * diff;
            }
        }
        attraction += acc / n;
    }
    attraction /= kf;

    let mut repulsion = 0.0;
    if k >= 2 {
        let norm_pairs = kf * (kf - 1.0);
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                let ma = means.get(ids[a]).expect("present");
                let mb = means.get(ids[b]).expect("present");
                let d = dist(ma, mb);
                let hinge = 2.0 * cfg.rho_r - d;
                if hinge <= 0.0 {
                    continue;
                }
                repulsion += hinge * hinge;
                if d > 0.0 {
                    // the ordered pair (a, b) pushes mu_a away from mu_b and
                    // vice versa; (b, a) is visited separately
                    let scale = weights.repulsion * 2.0 * hinge / (d * norm_pairs);
                    for c in 0..dim {
                        let diff = ma[c] - mb[c];
                        mean_grads[a][c] -= scale * diff;
                        mean_grads[b][c] += scale * diff;
                    }
                }
            }
        }
        repulsion /= norm_pairs;
    }

    let mut regularisation = 0.0;
    for (slot, &id) in ids.iter().enumerate() {
        let mu = means.get(id).expect("present");
        let n = norm(mu);
        regularisation += n;
        if n > 0.0 {
            for c in 0..dim {
                mean_grads[slot][c] += weights.regularisation * mu[c] / (n * kf);
            }
        }
    }
    regularisation /= kf;

    // mu_k = (1/|S_k|) sum y_i, so each member receives dL/dmu_k / |S_k|.
    for (slot, &id) in ids.iter().enumerate() {
        let pixels = &part.sets()[&id];
        let n = pixels.len() as f64;
        for &px in pixels {
            let base = view.base(px);
            for c in 0..dim {
                grad[c * view.stride + base] += mean_grads[slot][c] / n;
            }
        }
    }

    let total = weights.attraction * attraction
        + weights.repulsion * repulsion
        + weights.regularisation * regularisation;
    Ok(InstanceLoss {
        total,
        attraction,
        repulsion,
        regularisation,
        no_instances: false,
        grad: Tensor::new(y.shape().to_vec(), grad).expect("same shape"),
    })
}

/// Weighted instance loss value only (no gradient); the scalar used by the
/// finite-difference oracle.
pub fn weighted_instance_loss_value(
    y: &Tensor<f64>,
    part: &InstancePartition,
    cfg: &LossConfig,
    weights: TermWeights,
) -> Result<f64, LossError> {
    let means = compute_means(y, part)?;
    let la = attraction_loss(y, part, &means, cfg)?.value;
    let lr = repulsion_loss(&means, cfg).value;
    let lreg = regularisation_loss(&means).value;
    Ok(weights.attraction * la + weights.repulsion * lr + weights.regularisation * lreg)
}

/// Attraction loss averaged over every window of `window` consecutive frames.
///
/// Each window recomputes its own instance means, so embeddings that drift
/// over time are penalised more the longer the window is.
pub fn windowed_attraction_loss(
    y: &Tensor<f64>,
    labels: &[InstanceLabelMap],
    window: usize,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    let [p, t, h, w] = field_dims(y)?;
    if labels.len() != t || labels.iter().any(|l| l.height() != h || l.width() != w) {
        return Err(LossError::LabelShape);
    }
    if window == 0 || window > t {
        return Err(LossError::BadWindow { window, frames: t });
    }
    let part = InstancePartition::from_labels(labels);
    let frame = h * w;
    let starts = t - window + 1;
    let mut total = 0.0;
    for start in 0..starts {
        let mut data = Vec::with_capacity(p * window * frame);
        for c in 0..p {
            let from = (c * t + start) * frame;
            data.extend_from_slice(&y.data()[from..from + window * frame]);
        }
        let block = Tensor::new(vec![p, window, h, w], data).expect("window extents");
        let sub = part.window(start, window);
        let means = compute_means(&block, &sub)?;
        total += attraction_loss(&block, &sub, &means, cfg)?.value;
    }
    Ok(total / starts as f64)
}

/// Label of the nearest instance mean for every video-pixel (ties go to the
/// lower id). Returns a `T·H·W` vector in frame-major order.
pub fn nearest_mean_labels(y: &Tensor<f64>, means: &InstanceMeans) -> Result<Vec<u32>, LossError> {
    let view = FieldView::new(y)?;
    let mut out = Vec::with_capacity(view.stride);
    let mut e = vec![0.0; view.dim];
    for t in 0..view.t {
        for h in 0..view.h {
            for w in 0..view.w {
                view.embedding(VideoPixel::new(t, h, w), &mut e);
                let best = means
                    .iter()
                    .map(|(id, m)| (id, dist(m, &e)))
                    .fold(None, |best: Option<(u32, f64)>, (id, d)| match best {
                        Some((_, bd)) if bd <= d => best,
                        _ => Some((id, d)),
                    });
                out.push(best.map_or(0, |(id, _)| id));
            }
        }
    }
    Ok(out)
}
