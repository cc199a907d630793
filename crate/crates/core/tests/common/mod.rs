//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Everything here is written straight from the
//! definitions, with plain loops and no calls into the code under test.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stembed_core::causal_stream::CausalStack;
use stembed_core::geometry::{CameraModel, DepthMap, Image, PhotometricConfig, PoseSE3, SourceView, ViewSynthesis};
use stembed_core::synthetic_scenes::{SceneSpec, Shape};
use stembed_core::{InstanceLabelMap, LossConfig, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Embedding of video-pixel `(t, r, c)` from a `[p, T, H, W]` field.
pub fn pixel(y: &Tensor<f64>, t: usize, r: usize, c: usize) -> Vec<f64> {
    let s = y.shape();
    (0..s[0]).map(|ch| y.at(&[ch, t, r, c])).collect()
}

/// Instance id → member embeddings, from label maps.
pub fn members(y: &Tensor<f64>, labels: &[InstanceLabelMap]) -> BTreeMap<u32, Vec<Vec<f64>>> {
    let mut out: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for (t, map) in labels.iter().enumerate() {
        for r in 0..map.height() {
            for c in 0..map.width() {
                let id = map.get(r, c);
                if id != 0 {
                    out.entry(id).or_default().push(pixel(y, t, r, c));
                }
            }
        }
    }
    out
}

pub fn mean_of(points: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; points[0].len()];
    for p in points {
        for (a, v) in m.iter_mut().zip(p) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= points.len() as f64);
    m
}

/// The three loss terms evaluated literally from their definitions.
pub struct NaiveLoss {
    pub attraction: f64,
    pub repulsion: f64,
    pub regularisation: f64,
}

pub fn naive_loss(y: &Tensor<f64>, labels: &[InstanceLabelMap], cfg: &LossConfig) -> NaiveLoss {
    let sets = members(y, labels);
    let k = sets.len() as f64;
    let means: Vec<Vec<f64>> = sets.values().map(|s| mean_of(s)).collect();
    let mut attraction = 0.0;
    for (s, mu) in sets.values().zip(&means) {
        let inner: f64 = s
            .iter()
            .map(|e| (norm(&sub(mu, e)) - cfg.rho_a).max(0.0).powi(2))
            .sum();
        attraction += inner / s.len() as f64;
    }
    let mut repulsion = 0.0;
    for (a, ma) in means.iter().enumerate() {
        for (b, mb) in means.iter().enumerate() {
            if a != b {
                repulsion += (2.0 * cfg.rho_r - norm(&sub(ma, mb))).max(0.0).powi(2);
            }
        }
    }
    let regularisation: f64 = means.iter().map(|m| norm(m)).sum();
    if k == 0.0 {
        return NaiveLoss {
            attraction: 0.0,
            repulsion: 0.0,
            regularisation: 0.0,
        };
    }
    NaiveLoss {
        attraction: attraction / k,
        repulsion: if k > 1.0 { repulsion / (k * (k - 1.0)) } else { 0.0 },
        regularisation: regularisation / k,
    }
}

/// Smallest distance of any hinge or norm argument from its kink, so a
/// finite-difference step well below it stays on one smooth branch.
pub fn kink_margin(y: &Tensor<f64>, labels: &[InstanceLabelMap], cfg: &LossConfig) -> f64 {
    let sets = members(y, labels);
    let means: Vec<Vec<f64>> = sets.values().map(|s| mean_of(s)).collect();
    let mut margin = f64::INFINITY;
    for (s, mu) in sets.values().zip(&means) {
        margin = margin.min(norm(mu));
        for e in s {
            let d = norm(&sub(mu, e));
            margin = margin.min(d).min((d - cfg.rho_a).abs());
        }
    }
    for (a, ma) in means.iter().enumerate() {
        for mb in &means[a + 1..] {
            let d = norm(&sub(ma, mb));
            margin = margin.min(d).min((2.0 * cfg.rho_r - d).abs());
        }
    }
    margin
}

/// Random field and labels of shape `[p, T, H, W]` with up to three
/// instances and some background.
pub fn random_embedding_case(r: &mut ChaCha8Rng, dims: [usize; 4]) -> (Tensor<f64>, Vec<InstanceLabelMap>) {
    let [p, t, h, w] = dims;
    let k = r.random_range(1..=3u32);
    let labels: Vec<InstanceLabelMap> = (0..t)
        .map(|_| {
            let ids = (0..h * w).map(|_| r.random_range(0..=k)).collect();
            InstanceLabelMap::new(h, w, ids)
        })
        .collect();
    let y = Tensor::from_fn(&[p, t, h, w], |_| r.random_range(-1.2..1.2)).unwrap();
    (y, labels)
}

/// Causal residual stack evaluated with explicit loops over output channel,
/// input channel, time tap, and both spatial offsets.
pub fn naive_causal_forward(stack: &CausalStack, x: &Tensor<f32>) -> Tensor<f32> {
    let cfg = stack.config();
    let (c, m, k) = (cfg.channels, cfg.channels / 2, cfg.temporal_kernel);
    let s = x.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    let mut cur: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let idx = |ch: usize, ti: usize, r: usize, q: usize| ((ch * t + ti) * h + r) * w + q;
    for b in stack.blocks() {
        let mut down = vec![0.0f64; m * t * h * w];
        for o in 0..m {
            for ti in 0..t {
                for r in 0..h {
                    for q in 0..w {
                        let mut acc = b.down_b[o] as f64;
                        for i in 0..c {
                            acc += b.down_w[o * c + i] as f64 * cur[idx(i, ti, r, q)];
                        }
                        down[((o * t + ti) * h + r) * w + q] = acc.max(0.0);
                    }
                }
            }
        }
        let mut mid = vec![0.0f64; m * t * h * w];
        for o in 0..m {
            for ti in 0..t {
                for r in 0..h {
                    for q in 0..w {
                        let mut acc = b.conv_b[o] as f64;
                        for i in 0..m {
                            for dt in 0..k {
                                // tap dt reads frame ti - (k - 1) + dt
                                let Some(src_t) = (ti + dt + 1).checked_sub(k) else {
                                    continue;
                                };
                                for ky in 0..3 {
                                    for kx in 0..3 {
                                        let (sr, sq) = (r as isize + ky as isize - 1, q as isize + kx as isize - 1);
                                        if sr < 0 || sq < 0 || sr >= h as isize || sq >= w as isize {
                                            continue;
                                        }
                                        let wgt = b.conv_w[(((o * m + i) * k + dt) * 3 + ky) * 3 + kx] as f64;
                                        acc += wgt * down[((i * t + src_t) * h + sr as usize) * w + sq as usize];
                                    }
                                }
                            }
                        }
                        mid[((o * t + ti) * h + r) * w + q] = acc.max(0.0);
                    }
                }
            }
        }
        for o in 0..c {
            for ti in 0..t {
                for r in 0..h {
                    for q in 0..w {
                        let mut acc = b.up_b[o] as f64;
                        for i in 0..m {
                            acc += b.up_w[o * m + i] as f64 * mid[((i * t + ti) * h + r) * w + q];
                        }
                        cur[idx(o, ti, r, q)] += acc;
                    }
                }
            }
        }
    }
    Tensor::new(s.to_vec(), cur.into_iter().map(|v| v as f32).collect()).unwrap()
}

/// One frame of a micro-sequence: `(id, mask)` lists for hypotheses and
/// ground truth.
pub type MicroFrame = (Vec<(u32, Vec<bool>)>, Vec<(u32, Vec<bool>)>);

#[derive(Debug, Default, PartialEq)]
pub struct Recount {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub soft_tp: f64,
    pub gt_total: usize,
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Exhaustive recount: ψ by scanning every ground truth per hypothesis, and
/// id switches by searching backwards for each ground-truth track's most
/// recent matched frame.
pub fn brute_force_recount(frames: &[MicroFrame], threshold: f64) -> Recount {
    let mut out = Recount::default();
    // per frame: matched (gt id → hyp id)
    let mut history: Vec<BTreeMap<u32, u32>> = Vec::new();
    for (hyps, gts) in frames {
        let mut claims: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
        for (hi, (_, hm)) in hyps.iter().enumerate() {
            let mut best = (usize::MAX, -1.0);
            for (gi, (_, gm)) in gts.iter().enumerate() {
                let v = iou(hm, gm);
                if v > best.1 {
                    best = (gi, v);
                }
            }
            if best.0 != usize::MAX && best.1 > threshold {
                let better = claims.get(&best.0).is_none_or(|&(_, prev)| best.1 > prev);
                if better {
                    claims.insert(best.0, (hi, best.1));
                }
            }
        }
        out.gt_total += gts.len();
        out.tp += claims.len();
        out.fp += hyps.len() - claims.len();
        out.fn_ += gts.len() - claims.len();
        let mut now = BTreeMap::new();
        for (&gi, &(hi, v)) in &claims {
            out.soft_tp += v;
            let (gid, hid) = (gts[gi].0, hyps[hi].0);
            let previous = history.iter().rev().find_map(|f| f.get(&gid).copied());
            if previous.is_some_and(|p| p != hid) {
                out.ids += 1;
            }
            now.insert(gid, hid);
        }
        history.push(now);
    }
    out
}

/// Random micro-sequence: ≤ `max_objects` ground-truth objects on a small
/// grid over ≤ `max_frames` frames, with hypotheses made by jittering,
/// dropping, adding and relabelling ground-truth masks.
pub fn random_micro_sequence(r: &mut ChaCha8Rng, max_objects: u32, max_frames: usize) -> Vec<MicroFrame> {
    let (h, w) = (4usize, 5usize);
    let frames = r.random_range(1..=max_frames);
    let objects = r.random_range(1..=max_objects);
    let mut hyp_of: Vec<u32> = (0..=objects).map(|o| o + 10).collect();
    (0..frames)
        .map(|_| {
            let gt_ids: Vec<u32> = (0..h * w).map(|_| r.random_range(0..=objects)).collect();
            let mut hyp_ids = gt_ids.clone();
            for v in hyp_ids.iter_mut() {
                if r.random_bool(0.2) {
                    *v = r.random_range(0..=objects + 1);
                }
            }
            if r.random_bool(0.3) {
                let o = r.random_range(1..=objects) as usize;
                hyp_of[o] = r.random_range(10..16);
            }
            let split = |ids: &[u32], relabel: &dyn Fn(u32) -> u32| -> Vec<(u32, Vec<bool>)> {
                let mut present: Vec<u32> = ids.iter().copied().filter(|&v| v != 0).collect();
                present.sort_unstable();
                present.dedup();
                present
                    .into_iter()
                    .map(|v| (relabel(v), ids.iter().map(|&x| x == v).collect()))
                    .collect()
            };
            let gts = split(&gt_ids, &|v| v);
            // relabelling must stay injective within the frame
            let mut used = std::collections::BTreeSet::new();
            let map: BTreeMap<u32, u32> = (1..=objects + 1)
                .map(|v| {
                    let mut id = if (v as usize) < hyp_of.len() { hyp_of[v as usize] } else { 99 };
                    while !used.insert(id) {
                        id += 100;
                    }
                    (v, id)
                })
                .collect();
            let hyps = split(&hyp_ids, &|v| map[&v]);
            (hyps, gts)
        })
        .collect()
}

/// Nearest covering object per pixel, evaluated from the shape equations.
pub fn painter_oracle(spec: &SceneSpec, t: usize) -> Vec<u32> {
    let cam = spec.camera();
    let tr = spec.pose(t).translation;
    let mut out = vec![0u32; spec.height * spec.width];
    for row in 0..spec.height {
        for col in 0..spec.width {
            let mut best: Option<(f64, u32)> = None;
            for o in &spec.objects {
                let cy = o.start[0] + t as f64 * o.velocity[0] - cam.fy * tr[1] / o.depth;
                let cx = o.start[1] + t as f64 * o.velocity[1] - cam.fx * tr[0] / o.depth;
                let (dy, dx) = (row as f64 - cy, col as f64 - cx);
                let inside = match o.shape {
                    Shape::Rect { height, width } => {
                        2.0 * dy >= -height && 2.0 * dy < height && 2.0 * dx >= -width && 2.0 * dx < width
                    }
                    Shape::Disc { radius } => dx.hypot(dy) <= radius,
                };
                if inside && best.is_none_or(|(d, _)| o.depth < d) {
                    best = Some((o.depth, o.id));
                }
            }
            out[row * spec.width + col] = best.map_or(0, |(_, id)| id);
        }
    }
    out
}

/// A smooth random image, sums of low-frequency sinusoids per channel.
pub fn smooth_image(r: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    let waves: Vec<[f64; 4]> = (0..9)
        .map(|_| {
            [
                r.random_range(0.15..0.6),
                r.random_range(0.15..0.6),
                r.random_range(0.0..std::f64::consts::TAU),
                r.random_range(0.05..0.12),
            ]
        })
        .collect();
    Image::from_fn(h, w, 3, |row, col, ch| {
        let mut v = 0.5;
        for wave in &waves[ch * 3..ch * 3 + 3] {
            v += wave[3] * (wave[0] * col as f64 + wave[1] * row as f64 + wave[2]).sin();
        }
        v
    })
}

/// A random view-synthesis problem with two source views and a random depth
/// map, all small enough for a full finite-difference sweep.
pub struct GeometryCase {
    pub problem: ViewSynthesis,
    pub depth: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

pub fn random_geometry_case(r: &mut ChaCha8Rng, auto_mask: bool) -> GeometryCase {
    let (h, w) = (10usize, 12usize);
    let camera = CameraModel::new(14.0, 13.0, 5.7, 4.6).unwrap();
    let target = smooth_image(r, h, w);
    let mut pose = || {
        PoseSE3::new(
            [r.random_range(-0.03..0.03), r.random_range(-0.03..0.03), r.random_range(-0.03..0.03)],
            [r.random_range(-0.25..0.25), r.random_range(-0.15..0.15), r.random_range(-0.1..0.1)],
        )
    };
    let poses = [pose(), pose()];
    let sources = poses
        .iter()
        .map(|&pose| SourceView {
            image: smooth_image(r, h, w),
            pose,
        })
        .collect();
    let config = PhotometricConfig {
        auto_mask,
        ..PhotometricConfig::default()
    };
    let depth = (0..h * w).map(|_| r.random_range(2.0..6.0)).collect();
    GeometryCase {
        problem: ViewSynthesis::new(target, sources, camera, config).unwrap(),
        depth,
        h,
        w,
    }
}

impl GeometryCase {
    pub fn depth_map(&self, values: &[f64]) -> DepthMap {
        DepthMap::new(self.h, self.w, values.to_vec()).unwrap()
    }

    /// Whether pixel `i`'s projection into any source lies within `margin`
    /// of a bilinear cell boundary, where the sampled value is not
    /// differentiable.
    pub fn near_sampling_kink(&self, i: usize, margin: f64) -> bool {
        let (row, col) = (i / self.w, i % self.w);
        let cam = &self.problem.camera;
        let ray = cam.ray(col as f64, row as f64);
        let point = ray * self.depth[i];
        self.problem.sources.iter().any(|s| {
            let q = s.pose.transform_point(&point);
            let u = cam.fx * q.x / q.z + cam.cx;
            let v = cam.fy * q.y / q.z + cam.cy;
            let frac = |x: f64| (x - x.round()).abs();
            // integer coordinates include both borders; points beyond them
            // are clamped or invalid, which is smooth away from the edge
            q.z <= 0.0 || frac(u) < margin || frac(v) < margin
        })
    }
}

/// Bijection check between two label maps: every predicted id covers
/// exactly one ground-truth id's pixels and vice versa.
pub fn equal_up_to_permutation(gt: &[u32], pred: &[u32]) -> bool {
    let mut fwd: BTreeMap<u32, u32> = BTreeMap::new();
    let mut back: BTreeMap<u32, u32> = BTreeMap::new();
    for (&g, &p) in gt.iter().zip(pred) {
        if (g == 0) != (p == 0) {
            return false;
        }
        if *fwd.entry(g).or_insert(p) != p || *back.entry(p).or_insert(g) != g {
            return false;
        }
    }
    true
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let up = f(&probe);
            probe[i] = x[i] - eps;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute error when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = norm(&sub(a, b));
    let scale = norm(a).max(norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Zero-loss field for `labels`: instance means at least `2 rho_r` apart
/// (drawn by rejection), every pixel strictly inside the `rho_a` ball around
/// its instance's exact pixel mean, background pixels far away.
pub fn zero_loss_field(labels: &[InstanceLabelMap], p: usize, cfg: &LossConfig, r: &mut ChaCha8Rng) -> Tensor<f64> {
    let (t, h, w) = (labels.len(), labels[0].height(), labels[0].width());
    let mut ids: Vec<u32> = labels.iter().flat_map(|l| l.instance_ids()).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut means: Vec<Vec<f64>> = Vec::new();
    while means.len() < ids.len() {
        let cand: Vec<f64> = (0..p).map(|_| r.random_range(-4.0..4.0)).collect();
        if means.iter().all(|m| norm(&sub(m, &cand)) >= 2.0 * cfg.rho_r * 1.01) {
            means.push(cand);
        }
    }
    let mut y = Tensor::zeros(&[p, t, h, w]).unwrap();
    for (k, &id) in ids.iter().enumerate() {
        let coords: Vec<(usize, usize, usize)> = (0..t)
            .flat_map(|ti| (0..h * w).map(move |i| (ti, i / w, i % w)))
            .filter(|&(ti, row, col)| labels[ti].get(row, col) == id)
            .collect();
        let mut noise: Vec<Vec<f64>> = coords
            .iter()
            .map(|_| (0..p).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let centre = mean_of(&noise);
        for n in noise.iter_mut() {
            *n = sub(n, &centre);
        }
        let radius = noise.iter().map(|n| norm(n)).fold(0.0, f64::max).max(1e-12);
        let scale = 0.9 * cfg.rho_a / radius;
        for (&(ti, row, col), n) in coords.iter().zip(&noise) {
            for c in 0..p {
                y.set(&[c, ti, row, col], means[k][c] + scale * n[c]);
            }
        }
    }
    for (ti, map) in labels.iter().enumerate() {
        for row in 0..h {
            for col in 0..w {
                if map.get(row, col) == 0 {
                    for c in 0..p {
                        y.set(&[c, ti, row, col], 100.0);
                    }
                }
            }
        }
    }
    y
}
