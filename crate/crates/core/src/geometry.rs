//! Projective view synthesis for self-supervised depth.
//!
//! A target pixel is lifted to 3D with its predicted depth, moved into the
//! source camera with a rigid transform and projected back; the source image
//! is bilinearly sampled there to synthesise the target view. The
//! photometric error mixes SSIM and L1, the per-pixel minimum over source
//! views is averaged over valid pixels, and an edge-aware smoothness term on
//! mean-normalised inverse depth is added. [`ViewSynthesis::loss_and_grad`]
//! returns the analytic gradient of that scalar with respect to depth.
//!
//! Images are row-major `H × W × C` with values nominally in `[0, 1]`.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid camera: {0}")]
    BadCamera(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("at least one source view is required")]
    NoSources,
    #[error("ssim window must be a positive odd integer, got {0}")]
    BadWindow(usize),
}

pub const MIN_DEPTH: f64 = 1e-3;
pub const MAX_DEPTH: f64 = 80.0;
/// Points with a source-camera depth at or below this are behind the camera.
const MIN_PROJ_Z: f64 = 1e-6;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy };
        if !(fx > 0.0 && fy > 0.0) || !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::BadCamera(format!("{cam:?}")));
        }
        Ok(cam)
    }

    /// Checks the principal point lies inside a `height × width` image.
    pub fn validate_for(&self, height: usize, width: usize) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(GeometryError::BadCamera("focal lengths must be positive".into()));
        }
        if !(0.0..=(width as f64 - 1.0)).contains(&self.cx) || !(0.0..=(height as f64 - 1.0)).contains(&self.cy) {
            return Err(GeometryError::BadCamera(format!(
                "principal point ({}, {}) outside {height}x{width} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹ (u, v, 1)ᵀ`.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    /// Perspective projection of a camera-frame point; `None` when the point
    /// is not in front of the camera.
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > MIN_PROJ_Z).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Rigid transform as axis-angle rotation plus translation.
///
/// Applied to a point as `R x + t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSE3 {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_translation(t: [f64; 3]) -> Self {
        Self {
            rotation: [0.0; 3],
            translation: t,
        }
    }

    pub fn new(rotation: [f64; 3], translation: [f64; 3]) -> Self {
        Self { rotation, translation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        Rotation3::new(Vector3::from(self.rotation)).into_inner()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation_matrix() * p + self.translation_vector()
    }

    pub fn inverse(&self) -> Self {
        let rot_inv = Rotation3::new(Vector3::from(self.rotation)).inverse();
        let t = -(rot_inv * self.translation_vector());
        Self {
            rotation: rot_inv.scaled_axis().into(),
            translation: t.into(),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &PoseSE3) -> Self {
        let ra = Rotation3::new(Vector3::from(self.rotation));
        let rb = Rotation3::new(Vector3::from(other.rotation));
        let t = ra * other.translation_vector() + self.translation_vector();
        Self {
            rotation: (ra * rb).scaled_axis().into(),
            translation: t.into(),
        }
    }
}

/// Per-pixel depth, clamped to `[MIN_DEPTH, MAX_DEPTH]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self, GeometryError> {
        if values.len() != height * width || height == 0 || width == 0 {
            return Err(GeometryError::ShapeMismatch(format!(
                "{} depth values for a {height}x{width} map",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| v.is_nan()) {
            return Err(GeometryError::NonPositiveDepth(*bad));
        }
        let values = values.into_iter().map(|d| d.clamp(MIN_DEPTH, MAX_DEPTH)).collect();
        Ok(Self { height, width, values })
    }

    pub fn constant(height: usize, width: usize, depth: f64) -> Result<Self, GeometryError> {
        Self::new(height, width, vec![depth; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Row-major `H × W × C` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if data.len() != height * width * channels || height == 0 || width == 0 || channels == 0 {
            return Err(GeometryError::ShapeMismatch(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels]).expect("positive extents")
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::new(height, width, channels, data).expect("positive extents")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let at = (row * self.width + col) * self.channels;
        &self.data[at..at + self.channels]
    }

    fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }
}

/// How per-source photometric errors are reduced at each pixel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Minimum over sources.
    #[default]
    Min,
    /// Sum over sources.
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhotometricConfig {
    /// SSIM share of the photometric error; the rest is L1.
    pub alpha: f64,
    pub smooth_weight: f64,
    pub ssim_window: usize,
    /// Exclude pixels where the unwarped source already beats the warp.
    pub auto_mask: bool,
    pub reduction: Reduction,
}

impl Default for PhotometricConfig {
    fn default() -> Self {
        Self {
            alpha: 0.85,
            smooth_weight: 0.001,
            ssim_window: 3,
            auto_mask: true,
            reduction: Reduction::Min,
        }
    }
}

impl PhotometricConfig {
    fn validate(&self) -> Result<(), GeometryError> {
        if self.ssim_window == 0 || self.ssim_window.is_multiple_of(2) {
            return Err(GeometryError::BadWindow(self.ssim_window));
        }
        Ok(())
    }
}

/// `depth · K⁻¹ (u, v, 1)ᵀ`.
pub fn backproject(u: f64, v: f64, depth: f64, cam: &CameraModel) -> Result<Vector3<f64>, GeometryError> {
    if !(depth > 0.0) {
        return Err(GeometryError::NonPositiveDepth(depth));
    }
    Ok(cam.ray(u, v) * depth)
}

/// Continuous source-image coordinates of a target pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    /// Point lies in front of the source camera.
    pub in_front: bool,
    /// In front and inside `[0, W − 1] × [0, H − 1]`.
    pub valid: bool,
}

/// Projects target pixel `(u, v)` with the given depth into a source camera
/// related by `pose` (target to source).
pub fn project_with_depth(
    u: f64,
    v: f64,
    depth: f64,
    pose: &PoseSE3,
    cam: &CameraModel,
    height: usize,
    width: usize,
) -> Result<Projection, GeometryError> {
    let p = pose.transform_point(&backproject(u, v, depth, cam)?);
    Ok(projection_from_point(&p, cam, height, width))
}

fn projection_from_point(p: &Vector3<f64>, cam: &CameraModel, height: usize, width: usize) -> Projection {
    match cam.project_point(p) {
        Some((u, v)) => {
            let inside = u >= 0.0 && v >= 0.0 && u <= (width - 1) as f64 && v <= (height - 1) as f64;
            Projection {
                u,
                v,
                in_front: true,
                valid: inside,
            }
        }
        None => Projection {
            u: f64::NAN,
            v: f64::NAN,
            in_front: false,
            valid: false,
        },
    }
}

/// Projects integer target pixel `(col, row)` using the depth map value there.
pub fn project(col: usize, row: usize, depth: &DepthMap, pose: &PoseSE3, cam: &CameraModel) -> Projection {
    let d = depth.get(row, col);
    project_with_depth(col as f64, row as f64, d, pose, cam, depth.height(), depth.width())
        .expect("depth maps hold positive values")
}

/// Bilinear sample with clamp-to-border addressing.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub values: Vec<f64>,
    pub in_bounds: bool,
}

struct BilinearTap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    clamped_u: bool,
    clamped_v: bool,
}

fn tap(width: usize, height: usize, u: f64, v: f64) -> BilinearTap {
    let max_u = (width - 1) as f64;
    let max_v = (height - 1) as f64;
    let uc = u.clamp(0.0, max_u);
    let vc = v.clamp(0.0, max_v);
    let x0 = (uc.floor() as usize).min(width - 1);
    let y0 = (vc.floor() as usize).min(height - 1);
    BilinearTap {
        x0,
        x1: (x0 + 1).min(width - 1),
        y0,
        y1: (y0 + 1).min(height - 1),
        fx: uc - x0 as f64,
        fy: vc - y0 as f64,
        clamped_u: u < 0.0 || u > max_u,
        clamped_v: v < 0.0 || v > max_v,
    }
}

pub fn bilinear_sample(img: &Image, u: f64, v: f64) -> Sample {
    let t = tap(img.width, img.height, u, v);
    let values = (0..img.channels)
        .map(|c| {
            let top = (1.0 - t.fx) * img.get(t.y0, t.x0, c) + t.fx * img.get(t.y0, t.x1, c);
            let bottom = (1.0 - t.fx) * img.get(t.y1, t.x0, c) + t.fx * img.get(t.y1, t.x1, c);
            (1.0 - t.fy) * top + t.fy * bottom
        })
        .collect();
    Sample {
        values,
        in_bounds: !(t.clamped_u || t.clamped_v),
    }
}

/// Bilinear sample plus its derivatives along `u` and `v` (zero along a
/// clamped axis), written into the three output slices.
fn bilinear_with_grad(img: &Image, u: f64, v: f64, val: &mut [f64], du: &mut [f64], dv: &mut [f64]) {
    let t = tap(img.width, img.height, u, v);
    for c in 0..img.channels {
        let a = img.get(t.y0, t.x0, c);
        let b = img.get(t.y0, t.x1, c);
        let cc = img.get(t.y1, t.x0, c);
        let d = img.get(t.y1, t.x1, c);
        let top = (1.0 - t.fx) * a + t.fx * b;
        let bottom = (1.0 - t.fx) * cc + t.fx * d;
        val[c] = (1.0 - t.fy) * top + t.fy * bottom;
        du[c] = if t.clamped_u {
            0.0
        } else {
            (1.0 - t.fy) * (b - a) + t.fy * (d - cc)
        };
        dv[c] = if t.clamped_v { 0.0 } else { bottom - top };
    }
}

/// Warp of one source image into the target frame.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedView {
    pub image: Image,
    pub valid: Vec<bool>,
}

/// Synthesises the target view from `source` using target depth and the
/// target-to-source pose. Pixels projecting behind the camera get zeros.
pub fn synthesize_view(
    source: &Image,
    depth: &DepthMap,
    pose: &PoseSE3,
    cam: &CameraModel,
) -> Result<WarpedView, GeometryError> {
    if source.height != depth.height() || source.width != depth.width() {
        return Err(GeometryError::ShapeMismatch("source image and depth map differ".into()));
    }
    let (h, w, ch) = (source.height, source.width, source.channels);
    let rot = pose.rotation_matrix();
    let trans = pose.translation_vector();
    let mut data = vec![0.0; h * w * ch];
    let mut valid = vec![false; h * w];
    for row in 0..h {
        for col in 0..w {
            let x = cam.ray(col as f64, row as f64) * depth.get(row, col);
            let p = rot * x + trans;
            let proj = projection_from_point(&p, cam, h, w);
            let i = row * w + col;
            if !proj.in_front {
                continue;
            }
            let s = bilinear_sample(source, proj.u, proj.v);
            data[i * ch..(i + 1) * ch].copy_from_slice(&s.values);
            valid[i] = proj.valid;
        }
    }
    Ok(WarpedView {
        image: Image::new(h, w, ch, data)?,
        valid,
    })
}

/// Window statistics of one pixel and channel.
#[derive(Clone, Copy, Debug, Default)]
struct WindowStats {
    n: f64,
    mx: f64,
    my: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl WindowStats {
    fn ssim(&self) -> f64 {
        let a = 2.0 * self.mx * self.my + SSIM_C1;
        let b = 2.0 * self.sxy + SSIM_C2;
        let c = self.mx * self.mx + self.my * self.my + SSIM_C1;
        let e = self.sxx + self.syy + SSIM_C2;
        (a * b) / (c * e)
    }

    /// Partial derivatives of SSIM with respect to (my, syy, sxy).
    fn ssim_partials(&self) -> (f64, f64, f64) {
        let a = 2.0 * self.mx * self.my + SSIM_C1;
        let b = 2.0 * self.sxy + SSIM_C2;
        let c = self.mx * self.mx + self.my * self.my + SSIM_C1;
        let e = self.sxx + self.syy + SSIM_C2;
        let s = (a * b) / (c * e);
        let d_my = 2.0 * self.mx * b / (c * e) - s * 2.0 * self.my / c;
        let d_syy = -s / e;
        let d_sxy = 2.0 * a / (c * e);
        (d_my, d_syy, d_sxy)
    }
}

fn window_range(center: usize, radius: usize, len: usize) -> std::ops::Range<usize> {
    center.saturating_sub(radius)..(center + radius + 1).min(len)
}

fn window_stats(x: &Image, y: &Image, radius: usize) -> Vec<WindowStats> {
    let (h, w, ch) = (x.height, x.width, x.channels);
    let mut out = vec![WindowStats::default(); h * w * ch];
    for row in 0..h {
        for col in 0..w {
            for c in 0..ch {
                let mut s = WindowStats::default();
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in window_range(row, radius, h) {
                    for q in window_range(col, radius, w) {
                        let a = x.get(r, q, c);
                        let b = y.get(r, q, c);
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                        s.n += 1.0;
                    }
                }
                s.mx = sx / s.n;
                s.my = sy / s.n;
                s.sxx = sxx / s.n - s.mx * s.mx;
                s.syy = syy / s.n - s.my * s.my;
                s.sxy = sxy / s.n - s.mx * s.my;
                out[(row * w + col) * ch + c] = s;
            }
        }
    }
    out
}

struct PhotometricForward {
    error: Vec<f64>,
    stats: Vec<WindowStats>,
    /// Whether `(1 − SSIM) / 2` was clamped to `[0, 1]` at each pixel.
    clamped: Vec<bool>,
}

fn photometric_forward(target: &Image, other: &Image, cfg: &PhotometricConfig) -> PhotometricForward {
    let (h, w, ch) = (target.height, target.width, target.channels);
    let stats = window_stats(target, other, cfg.ssim_window / 2);
    let mut error = vec![0.0; h * w];
    let mut clamped = vec![false; h * w];
    for i in 0..h * w {
        let mut ssim = 0.0;
        let mut l1 = 0.0;
        for c in 0..ch {
            ssim += stats[i * ch + c].ssim();
            l1 += (target.data[i * ch + c] - other.data[i * ch + c]).abs();
        }
        ssim /= ch as f64;
        l1 /= ch as f64;
        let dssim = (1.0 - ssim) / 2.0;
        clamped[i] = !(0.0..=1.0).contains(&dssim);
        error[i] = cfg.alpha * dssim.clamp(0.0, 1.0) + (1.0 - cfg.alpha) * l1;
    }
    PhotometricForward { error, stats, clamped }
}

/// Per-pixel photometric error `alpha (1 − SSIM)/2 + (1 − alpha) L1`, both
/// terms averaged over channels. SSIM uses box statistics over an
/// `ssim_window` square clipped to the image.
pub fn photometric_error(target: &Image, other: &Image, cfg: &PhotometricConfig) -> Result<Vec<f64>, GeometryError> {
    cfg.validate()?;
    if !target.same_shape(other) {
        return Err(GeometryError::ShapeMismatch("photometric inputs differ in shape".into()));
    }
    Ok(photometric_forward(target, other, cfg).error)
}

/// Back-propagates `upstream = dL/de` (per pixel) to `dL/d other`.
fn photometric_backward(
    target: &Image,
    other: &Image,
    fwd: &PhotometricForward,
    upstream: &[f64],
    cfg: &PhotometricConfig,
) -> Vec<f64> {
    let (h, w, ch) = (target.height, target.width, target.channels);
    let radius = cfg.ssim_window / 2;
    let chf = ch as f64;
    let mut grad = vec![0.0; h * w * ch];
    for row in 0..h {
        for col in 0..w {
            let i = row * w + col;
            let g = upstream[i];
            if g == 0.0 {
                continue;
            }
            for c in 0..ch {
                let k = i * ch + c;
                let diff = other.data[k] - target.data[k];
                if diff != 0.0 {
                    grad[k] += g * (1.0 - cfg.alpha) * diff.signum() / chf;
                }
            }
            if fwd.clamped[i] || cfg.alpha == 0.0 {
                continue;
            }
            // e = alpha (1 − mean_c SSIM_c) / 2
            let scale = -g * cfg.alpha / (2.0 * chf);
            for c in 0..ch {
                let s = fwd.stats[i * ch + c];
                let (d_my, d_syy, d_sxy) = s.ssim_partials();
                for r in window_range(row, radius, h) {
                    for q in window_range(col, radius, w) {
                        let k = (r * w + q) * ch + c;
                        let a = target.data[k];
                        let b = other.data[k];
                        let d = d_my / s.n + d_syy * 2.0 * (b - s.my) / s.n + d_sxy * (a - s.mx) / s.n;
                        grad[k] += scale * d;
                    }
                }
            }
        }
    }
    grad
}

/// Edge-aware smoothness of mean-normalised inverse depth:
/// `mean |∂x d*| e^{−|∂x I|} + mean |∂y d*| e^{−|∂y I|}` with image gradients
/// averaged over channels.
pub fn smoothness_loss(depth: &DepthMap, image: &Image) -> Result<f64, GeometryError> {
    Ok(smoothness_with_grad(depth, image, false)?.0)
}

fn smoothness_with_grad(depth: &DepthMap, image: &Image, want_grad: bool) -> Result<(f64, Vec<f64>), GeometryError> {
    let (h, w) = (depth.height, depth.width);
    if image.height != h || image.width != w {
        return Err(GeometryError::ShapeMismatch("depth and image differ".into()));
    }
    let n = (h * w) as f64;
    let disp: Vec<f64> = depth.values.iter().map(|d| 1.0 / d).collect();
    let mean = disp.iter().sum::<f64>() / n;
    let nd: Vec<f64> = disp.iter().map(|d| d / mean).collect();
    let edge = |a: usize, b: usize| -> f64 {
        let ch = image.channels;
        let g = (0..ch)
            .map(|c| (image.data[a * ch + c] - image.data[b * ch + c]).abs())
            .sum::<f64>()
            / ch as f64;
        (-g).exp()
    };
    let mut g_nd = vec![0.0; h * w];
    let mut value = 0.0;
    let nx = (h * (w.saturating_sub(1))) as f64;
    let ny = ((h.saturating_sub(1)) * w) as f64;
    if w > 1 {
        let mut acc = 0.0;
        for r in 0..h {
            for c in 0..w - 1 {
                let (a, b) = (r * w + c + 1, r * w + c);
                let diff = nd[a] - nd[b];
                let e = edge(a, b);
                acc += diff.abs() * e;
                if want_grad && diff != 0.0 {
                    let s = diff.signum() * e / nx;
                    g_nd[a] += s;
                    g_nd[b] -= s;
                }
            }
        }
        value += acc / nx;
    }
    if h > 1 {
        let mut acc = 0.0;
        for r in 0..h - 1 {
            for c in 0..w {
                let (a, b) = ((r + 1) * w + c, r * w + c);
                let diff = nd[a] - nd[b];
                let e = edge(a, b);
                acc += diff.abs() * e;
                if want_grad && diff != 0.0 {
                    let s = diff.signum() * e / ny;
                    g_nd[a] += s;
                    g_nd[b] -= s;
                }
            }
        }
        value += acc / ny;
    }
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    // nd_j = disp_j / mean(disp): d nd_j / d disp_k = δ_jk / m − disp_j / (m² n)
    let cross: f64 = g_nd.iter().zip(&disp).map(|(g, d)| g * d).sum::<f64>() / (mean * mean * n);
    let grad = disp
        .iter()
        .zip(&g_nd)
        .map(|(d, g)| {
            let g_disp = g / mean - cross;
            // disp = 1 / depth
            -g_disp * d * d
        })
        .collect();
    Ok((value, grad))
}

/// Result of a reprojection loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectionLoss {
    /// `photometric + smooth_weight · smoothness`.
    pub value: f64,
    pub photometric: f64,
    pub smoothness: f64,
    /// Index of the source achieving the per-pixel minimum, `None` where the
    /// pixel was excluded (no valid source, or masked out).
    pub argmin: Vec<Option<usize>>,
    /// Number of pixels contributing to the photometric mean.
    pub included: usize,
}

fn reduce_sources(
    errors: &[Vec<f64>],
    warped: &[WarpedView],
    mask: Option<&[bool]>,
    reduction: Reduction,
) -> (Vec<Option<usize>>, Vec<f64>, usize) {
    let n = errors[0].len();
    let mut argmin = vec![None; n];
    let mut per_pixel = vec![0.0; n];
    let mut included = 0;
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        let mut sum = 0.0;
        for (s, e) in errors.iter().enumerate() {
            if !warped[s].valid[i] {
                continue;
            }
            sum += e[i];
            if best.is_none_or(|(_, b)| e[i] < b) {
                best = Some((s, e[i]));
            }
        }
        if let Some((s, b)) = best {
            argmin[i] = Some(s);
            per_pixel[i] = match reduction {
                Reduction::Min => b,
                Reduction::Sum => sum,
            };
            included += 1;
        }
    }
    (argmin, per_pixel, included)
}

/// Per-pixel minimum over source views of the photometric error, averaged
/// over pixels with at least one valid source (and inside `mask`, when
/// given), plus the smoothness term when `depth` is supplied.
pub fn min_reprojection_loss(
    target: &Image,
    warped: &[WarpedView],
    depth: Option<&DepthMap>,
    mask: Option<&[bool]>,
    cfg: &PhotometricConfig,
) -> Result<ReprojectionLoss, GeometryError> {
    reprojection_loss(target, warped, depth, mask, cfg, Reduction::Min)
}

/// Same as [`min_reprojection_loss`] but summing errors over sources.
pub fn summed_reprojection_loss(
    target: &Image,
    warped: &[WarpedView],
    depth: Option<&DepthMap>,
    mask: Option<&[bool]>,
    cfg: &PhotometricConfig,
) -> Result<ReprojectionLoss, GeometryError> {
    reprojection_loss(target, warped, depth, mask, cfg, Reduction::Sum)
}

fn reprojection_loss(
    target: &Image,
    warped: &[WarpedView],
    depth: Option<&DepthMap>,
    mask: Option<&[bool]>,
    cfg: &PhotometricConfig,
    reduction: Reduction,
) -> Result<ReprojectionLoss, GeometryError> {
    cfg.validate()?;
    if warped.is_empty() {
        return Err(GeometryError::NoSources);
    }
    let n = target.height * target.width;
    for view in warped {
        if !view.image.same_shape(target) || view.valid.len() != n {
            return Err(GeometryError::ShapeMismatch("warped view differs from target".into()));
        }
    }
    if mask.is_some_and(|m| m.len() != n) {
        return Err(GeometryError::ShapeMismatch("mask size".into()));
    }
    let errors: Vec<Vec<f64>> = warped
        .iter()
        .map(|v| photometric_forward(target, &v.image, cfg).error)
        .collect();
    let (argmin, per_pixel, included) = reduce_sources(&errors, warped, mask, reduction);
    let photometric = if included > 0 {
        per_pixel.iter().sum::<f64>() / included as f64
    } else {
        0.0
    };
    let smoothness = match depth {
        Some(d) => smoothness_loss(d, target)?,
        None => 0.0,
    };
    Ok(ReprojectionLoss {
        value: photometric + cfg.smooth_weight * smoothness,
        photometric,
        smoothness,
        argmin,
        included,
    })
}

/// Rigid-scene auto-mask: true where the best warped error is strictly below
/// the best error of the raw, unwarped sources.
pub fn auto_mask(
    target: &Image,
    sources: &[Image],
    warped: &[Image],
    cfg: &PhotometricConfig,
) -> Result<Vec<bool>, GeometryError> {
    cfg.validate()?;
    if sources.is_empty() || warped.is_empty() {
        return Err(GeometryError::NoSources);
    }
    if sources.iter().chain(warped).any(|img| !img.same_shape(target)) {
        return Err(GeometryError::ShapeMismatch("auto-mask inputs differ in shape".into()));
    }
    let min_error = |images: &[Image]| -> Vec<f64> {
        let mut best = vec![f64::INFINITY; target.height * target.width];
        for img in images {
            for (b, e) in best.iter_mut().zip(photometric_forward(target, img, cfg).error) {
                *b = b.min(e);
            }
        }
        best
    };
    let warped_err = min_error(warped);
    let raw_err = min_error(sources);
    Ok(warped_err.iter().zip(&raw_err).map(|(w, r)| w < r).collect())
}

/// One source frame and the target-to-source pose.
#[derive(Clone, Debug)]
pub struct SourceView {
    pub image: Image,
    pub pose: PoseSE3,
}

/// View-synthesis loss of a target frame against a set of source frames, as
/// a function of the target depth map.
#[derive(Clone, Debug)]
pub struct ViewSynthesis {
    pub target: Image,
    pub sources: Vec<SourceView>,
    pub camera: CameraModel,
    pub config: PhotometricConfig,
}

struct WarpJacobian {
    /// Per pixel: d(u, v)/d depth, zero where the point is behind the camera.
    du: Vec<f64>,
    dv: Vec<f64>,
    /// Per pixel and channel: sampled value derivatives along u and v.
    img_du: Vec<f64>,
    img_dv: Vec<f64>,
}

impl ViewSynthesis {
    pub fn new(target: Image, sources: Vec<SourceView>, camera: CameraModel, config: PhotometricConfig) -> Result<Self, GeometryError> {
        config.validate()?;
        if sources.is_empty() {
            return Err(GeometryError::NoSources);
        }
        if sources.iter().any(|s| !s.image.same_shape(&target)) {
            return Err(GeometryError::ShapeMismatch("source differs from target".into()));
        }
        Ok(Self {
            target,
            sources,
            camera,
            config,
        })
    }

    fn check_depth(&self, depth: &DepthMap) -> Result<(), GeometryError> {
        if depth.height != self.target.height || depth.width != self.target.width {
            return Err(GeometryError::ShapeMismatch("depth differs from target".into()));
        }
        Ok(())
    }

    fn warp(&self, source: &SourceView, depth: &DepthMap, jac: Option<&mut WarpJacobian>) -> WarpedView {
        let (h, w, ch) = (self.target.height, self.target.width, self.target.channels);
        let cam = &self.camera;
        let rot = source.pose.rotation_matrix();
        let trans = source.pose.translation_vector();
        let mut data = vec![0.0; h * w * ch];
        let mut valid = vec![false; h * w];
        let mut scratch_u = vec![0.0; ch];
        let mut scratch_v = vec![0.0; ch];
        let mut jac = jac;
        for row in 0..h {
            for col in 0..w {
                let i = row * w + col;
                let ray = cam.ray(col as f64, row as f64);
                let dir = rot * ray;
                let p = dir * depth.get(row, col) + trans;
                let proj = projection_from_point(&p, cam, h, w);
                if !proj.in_front {
                    continue;
                }
                valid[i] = proj.valid;
                let val = &mut data[i * ch..(i + 1) * ch];
                bilinear_with_grad(&source.image, proj.u, proj.v, val, &mut scratch_u, &mut scratch_v);
                if let Some(j) = jac.as_deref_mut() {
                    let z2 = p.z * p.z;
                    j.du[i] = cam.fx * (dir.x * p.z - p.x * dir.z) / z2;
                    j.dv[i] = cam.fy * (dir.y * p.z - p.y * dir.z) / z2;
                    j.img_du[i * ch..(i + 1) * ch].copy_from_slice(&scratch_u);
                    j.img_dv[i * ch..(i + 1) * ch].copy_from_slice(&scratch_v);
                }
            }
        }
        WarpedView {
            image: Image::new(h, w, ch, data).expect("target extents"),
            valid,
        }
    }

    /// Warped views of every source for the given depth.
    pub fn warped_views(&self, depth: &DepthMap) -> Result<Vec<WarpedView>, GeometryError> {
        self.check_depth(depth)?;
        Ok(self.sources.iter().map(|s| self.warp(s, depth, None)).collect())
    }

    /// The auto-mask for the given depth (all true when disabled).
    pub fn mask(&self, warped: &[WarpedView]) -> Result<Vec<bool>, GeometryError> {
        let n = self.target.height * self.target.width;
        if !self.config.auto_mask {
            return Ok(vec![true; n]);
        }
        let raw: Vec<Image> = self.sources.iter().map(|s| s.image.clone()).collect();
        let warped: Vec<Image> = warped.iter().map(|v| v.image.clone()).collect();
        auto_mask(&self.target, &raw, &warped, &self.config)
    }

    pub fn loss(&self, depth: &DepthMap) -> Result<ReprojectionLoss, GeometryError> {
        let warped = self.warped_views(depth)?;
        let mask = self.mask(&warped)?;
        reprojection_loss(&self.target, &warped, Some(depth), Some(&mask), &self.config, self.config.reduction)
    }

    /// Loss and its gradient with respect to each depth value. The auto-mask
    /// and the per-pixel choice of source are treated as constants.
    pub fn loss_and_grad(&self, depth: &DepthMap) -> Result<(ReprojectionLoss, Vec<f64>), GeometryError> {
        self.check_depth(depth)?;
        let (h, w, ch) = (self.target.height, self.target.width, self.target.channels);
        let n = h * w;
        let mut jacobians = Vec::with_capacity(self.sources.len());
        let mut warped = Vec::with_capacity(self.sources.len());
        for s in &self.sources {
            let mut j = WarpJacobian {
                du: vec![0.0; n],
                dv: vec![0.0; n],
                img_du: vec![0.0; n * ch],
                img_dv: vec![0.0; n * ch],
            };
            warped.push(self.warp(s, depth, Some(&mut j)));
            jacobians.push(j);
        }
        let mask = self.mask(&warped)?;
        let forwards: Vec<PhotometricForward> = warped
            .iter()
            .map(|v| photometric_forward(&self.target, &v.image, &self.config))
            .collect();
        let errors: Vec<Vec<f64>> = forwards.iter().map(|f| f.error.clone()).collect();
        let (argmin, per_pixel, included) = reduce_sources(&errors, &warped, Some(&mask), self.config.reduction);
        let photometric = if included > 0 {
            per_pixel.iter().sum::<f64>() / included as f64
        } else {
            0.0
        };
        let (smoothness, smooth_grad) = smoothness_with_grad(depth, &self.target, true)?;

        let mut grad: Vec<f64> = smooth_grad.iter().map(|g| g * self.config.smooth_weight).collect();
        if included > 0 {
            let share = 1.0 / included as f64;
            for (s, (view, fwd)) in warped.iter().zip(&forwards).enumerate() {
                let upstream: Vec<f64> = (0..n)
                    .map(|i| {
                        let picked = match (argmin[i], self.config.reduction) {
                            (Some(best), Reduction::Min) => best == s,
                            (Some(_), Reduction::Sum) => view.valid[i],
                            (None, _) => false,
                        };
                        if picked {
                            share
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if upstream.iter().all(|&u| u == 0.0) {
                    continue;
                }
                let g_img = photometric_backward(&self.target, &view.image, fwd, &upstream, &self.config);
                let j = &jacobians[s];
                for i in 0..n {
                    let mut acc = 0.0;
                    for c in 0..ch {
                        let k = i * ch + c;
                        acc += g_img[k] * (j.img_du[k] * j.du[i] + j.img_dv[k] * j.dv[i]);
                    }
                    grad[i] += acc;
                }
            }
        }
        // clamped depths do not move
        for (g, &d) in grad.iter_mut().zip(depth.values()) {
            if d <= MIN_DEPTH || d >= MAX_DEPTH {
                *g = 0.0;
            }
        }
        Ok((
            ReprojectionLoss {
                value: photometric + self.config.smooth_weight * smoothness,
                photometric,
                smoothness,
                argmin,
                included,
            },
            grad,
        ))
    }
}
