//! Instance discovery and temporal association at inference time.
//!
//! Foreground embeddings of a frame are pooled with the embeddings retained
//! by the [`TrackStore`] and clustered with flat-kernel mean shift. Seeds are
//! drawn from the current frame only; the retained embeddings add density
//! so modes stay where past frames put them. Each resulting cluster is then
//! matched to the nearest stored track whose mean embedding is closer than
//! `rho_r`, or opens a new track.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding_loss::LossConfig;
use crate::labels::InstanceLabelMap;
use crate::numerics::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("frame index {got} does not follow the previous frame {previous}")]
    NonMonotoneFrame { previous: usize, got: usize },
    #[error("embedding frame must be [p, H, W] with p = {expected_dim}, got {shape:?}")]
    BadEmbedding { shape: Vec<usize>, expected_dim: usize },
    #[error("foreground mask has {got} entries, expected {expected}")]
    MaskSize { expected: usize, got: usize },
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error("life span must be at least one frame")]
    BadLifeSpan,
}

/// Flat-kernel mean-shift settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanShiftParams {
    /// Kernel radius; also the assignment radius around a converged mode.
    pub bandwidth: f64,
    /// A mode closer than this to an existing cluster's mode joins it.
    pub merge_radius: f64,
    pub max_restarts: usize,
    pub max_iter: usize,
    /// Convergence threshold on the shift norm.
    pub tol: f64,
}

impl MeanShiftParams {
    pub fn new(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            merge_radius: bandwidth,
            max_restarts: 64,
            max_iter: 100,
            tol: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterResult {
    /// Cluster index of every input point; `None` when never reached.
    pub assignments: Vec<Option<usize>>,
    /// Mean of each cluster's members.
    pub means: Vec<Vec<f64>>,
    /// Converged mode each cluster was created from.
    pub modes: Vec<Vec<f64>>,
}

impl ClusterResult {
    pub fn num_clusters(&self) -> usize {
        self.means.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(move |(i, a)| (*a == Some(cluster)).then_some(i))
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean-shift clustering with window radius `rho_a` and default settings.
pub fn mean_shift_cluster(points: &[Vec<f64>], rho_a: f64, seed: u64) -> Result<ClusterResult, TrackError> {
    mean_shift_with(points, None, &MeanShiftParams::new(rho_a), seed)
}

/// Mean shift over `points`, drawing seeds only from points flagged in
/// `seedable` (all points when `None`).
///
/// Each restart picks a random unassigned seed and shifts it to the mean of
/// all points within the bandwidth until the shift is below `tol`. Every
/// unassigned point that fell inside the window at any step of the climb
/// joins the cluster, as does the seed itself.
/// A mode within `merge_radius` of an earlier cluster's mode extends that
/// cluster instead of opening a new one. Seeds left after `max_restarts`
/// stay unassigned.
pub fn mean_shift_with(
    points: &[Vec<f64>],
    seedable: Option<&[bool]>,
    params: &MeanShiftParams,
    seed: u64,
) -> Result<ClusterResult, TrackError> {
    if !(params.bandwidth > 0.0) {
        return Err(TrackError::BadBandwidth(params.bandwidth));
    }
    let n = points.len();
    let mut result = ClusterResult {
        assignments: vec![None; n],
        ..Default::default()
    };
    if n == 0 {
        return Ok(result);
    }
    let dim = points[0].len();
    let bw2 = params.bandwidth * params.bandwidth;
    let merge2 = params.merge_radius * params.merge_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<usize> = (0..n).filter(|&i| seedable.is_none_or(|s| s[i])).collect();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    let mut visited = vec![false; n];

    for _ in 0..params.max_restarts {
        candidates.retain(|&i| result.assignments[i].is_none());
        if candidates.is_empty() {
            break;
        }
        let start = candidates[rng.random_range(0..candidates.len())];
        let mut mode = points[start].clone();
        visited.iter_mut().for_each(|v| *v = false);
        for _ in 0..params.max_iter {
            let mut acc = vec![0.0; dim];
            let mut count = 0usize;
            for (p, seen) in points.iter().zip(visited.iter_mut()) {
                if dist2(p, &mode) <= bw2 {
                    acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
                    count += 1;
                    *seen = true;
                }
            }
            if count == 0 {
                break;
            }
            acc.iter_mut().for_each(|a| *a /= count as f64);
            let shift = dist2(&acc, &mode).sqrt();
            mode = acc;
            if shift < params.tol {
                break;
            }
        }
        let existing = result
            .modes
            .iter()
            .enumerate()
            .map(|(c, m)| (c, dist2(m, &mode)))
            .filter(|&(_, d)| d < merge2)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(c, _)| c);
        let cluster = existing.unwrap_or_else(|| {
            result.modes.push(mode.clone());
            sums.push(vec![0.0; dim]);
            counts.push(0);
            result.modes.len() - 1
        });
        let mut take = |i: usize, result: &mut ClusterResult| {
            result.assignments[i] = Some(cluster);
            sums[cluster].iter_mut().zip(&points[i]).for_each(|(a, v)| *a += v);
            counts[cluster] += 1;
        };
        take(start, &mut result);
        for i in 0..n {
            if result.assignments[i].is_none() && (visited[i] || dist2(&points[i], &mode) <= bw2) {
                take(i, &mut result);
            }
        }
    }
    result.means = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    Ok(result)
}

/// Outcome of matching one cluster against the store.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Track(u32),
    Fresh,
}

/// Greedy nearest-first matching of cluster means to track means.
///
/// Pairs closer than `rho_r` are taken in order of increasing distance
/// (ties: lower cluster index, then lower track id); each track and each
/// cluster is used at most once.
pub fn match_clusters(means: &[Vec<f64>], store: &TrackStore, rho_r: f64) -> Vec<Assignment> {
    let mut pairs: Vec<(f64, usize, u32)> = Vec::new();
    for (c, m) in means.iter().enumerate() {
        for (&id, track) in &store.tracks {
            let d = dist2(m, &track.mean).sqrt();
            if d < rho_r {
                pairs.push((d, c, id));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = vec![Assignment::Fresh; means.len()];
    let mut used = std::collections::BTreeSet::new();
    for (_, c, id) in pairs {
        if out[c] == Assignment::Fresh && !used.contains(&id) {
            out[c] = Assignment::Track(id);
            used.insert(id);
        }
    }
    out
}

/// One remembered embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Member {
    pub frame: usize,
    pub embedding: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Track {
    pub mean: Vec<f64>,
    pub last_seen: usize,
    members: VecDeque<Member>,
}

impl Track {
    pub fn members(&self) -> &VecDeque<Member> {
        &self.members
    }

    fn refresh_mean(&mut self) {
        let dim = self.mean.len();
        let mut acc = vec![0.0; dim];
        for m in &self.members {
            acc.iter_mut().zip(&m.embedding).for_each(|(a, v)| *a += v);
        }
        let n = self.members.len().max(1) as f64;
        self.mean = acc.into_iter().map(|v| v / n).collect();
    }
}

/// Tracks with their retained member embeddings.
///
/// A member from frame `f` is retained while `current − f <= life_span`; a
/// track whose members are all purged is forgotten. Ids are never reused.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackStore {
    tracks: BTreeMap<u32, Track>,
    next_id: u32,
    life_span: usize,
    last_frame: Option<usize>,
}

impl TrackStore {
    pub fn new(life_span: usize) -> Result<Self, TrackError> {
        if life_span == 0 {
            return Err(TrackError::BadLifeSpan);
        }
        Ok(Self {
            tracks: BTreeMap::new(),
            next_id: 1,
            life_span,
            last_frame: None,
        })
    }

    pub fn life_span(&self) -> usize {
        self.life_span
    }

    pub fn tracks(&self) -> &BTreeMap<u32, Track> {
        &self.tracks
    }

    pub fn last_frame(&self) -> Option<usize> {
        self.last_frame
    }

    /// Drops members older than the life span as of `frame`.
    pub fn age(&mut self, frame: usize) {
        let span = self.life_span;
        self.tracks.retain(|_, track| {
            let before = track.members.len();
            track.members.retain(|m| frame.saturating_sub(m.frame) <= span);
            if track.members.len() != before && !track.members.is_empty() {
                track.refresh_mean();
            }
            !track.members.is_empty()
        });
    }

    fn open(&mut self, dim: usize) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.tracks.insert(
            id,
            Track {
                mean: vec![0.0; dim],
                last_seen: 0,
                members: VecDeque::new(),
            },
        );
        id
    }

    fn observe(&mut self, id: u32, frame: usize, embeddings: impl IntoIterator<Item = Vec<f64>>) {
        let track = self.tracks.get_mut(&id).expect("track exists");
        track
            .members
            .extend(embeddings.into_iter().map(|embedding| Member { frame, embedding }));
        track.last_seen = frame;
        track.refresh_mean();
    }
}

/// Tracker knobs outside the loss configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Frames an embedding stays pooled; defaults to the training sequence
    /// length.
    pub life_span: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            life_span: 5,
            max_restarts: 64,
            seed: 0,
        }
    }
}

/// Segments one frame and updates the store.
///
/// `embedding` is `[p, H, W]`, `foreground` is `H·W` row-major. Pixels left
/// unclustered are labelled background.
pub fn segment_frame(
    embedding: &Tensor<f64>,
    foreground: &[bool],
    store: &mut TrackStore,
    frame_idx: usize,
    loss: &LossConfig,
    cfg: &TrackerConfig,
) -> Result<InstanceLabelMap, TrackError> {
    let [p, h, w] = match *embedding.shape() {
        [p, h, w] => [p, h, w],
        _ => {
            return Err(TrackError::BadEmbedding {
                shape: embedding.shape().to_vec(),
                expected_dim: 0,
            })
        }
    };
    if let Some(dim) = store.tracks.values().next().map(|t| t.mean.len()) {
        if dim != p {
            return Err(TrackError::BadEmbedding {
                shape: embedding.shape().to_vec(),
                expected_dim: dim,
            });
        }
    }
    if foreground.len() != h * w {
        return Err(TrackError::MaskSize {
            expected: h * w,
            got: foreground.len(),
        });
    }
    if let Some(previous) = store.last_frame {
        if frame_idx <= previous {
            return Err(TrackError::NonMonotoneFrame { previous, got: frame_idx });
        }
    }
    store.last_frame = Some(frame_idx);
    store.age(frame_idx);

    let plane = h * w;
    let pixels: Vec<usize> = (0..plane).filter(|&i| foreground[i]).collect();
    let mut points: Vec<Vec<f64>> = pixels
        .iter()
        .map(|&i| (0..p).map(|c| embedding.data()[c * plane + i]).collect())
        .collect();
    let current = points.len();
    for track in store.tracks.values() {
        points.extend(track.members.iter().map(|m| m.embedding.clone()));
    }
    let seedable: Vec<bool> = (0..points.len()).map(|i| i < current).collect();
    let params = MeanShiftParams {
        merge_radius: loss.rho_r,
        max_restarts: cfg.max_restarts,
        ..MeanShiftParams::new(loss.rho_a)
    };
    let frame_seed = cfg.seed ^ (frame_idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let clusters = mean_shift_with(&points, Some(&seedable), &params, frame_seed)?;

    // only clusters holding current pixels take part in matching
    let mut live: Vec<usize> = clusters.assignments[..current].iter().flatten().copied().collect();
    live.sort_unstable();
    live.dedup();
    let live_means: Vec<Vec<f64>> = live.iter().map(|&c| clusters.means[c].clone()).collect();
    let matches = match_clusters(&live_means, store, loss.rho_r);

    let mut labels = InstanceLabelMap::background(h, w);
    let mut ids = BTreeMap::new();
    for (&c, m) in live.iter().zip(&matches) {
        let id = match *m {
            Assignment::Track(id) => id,
            Assignment::Fresh => store.open(p),
        };
        ids.insert(c, id);
    }
    let mut observed: BTreeMap<u32, Vec<Vec<f64>>> = BTreeMap::new();
    for (k, &pix) in pixels.iter().enumerate() {
        if let Some(c) = clusters.assignments[k] {
            let id = ids[&c];
            labels.ids_mut()[pix] = id;
            observed.entry(id).or_default().push(points[k].clone());
        }
    }
    for (id, emb) in observed {
        store.observe(id, frame_idx, emb);
    }
    Ok(labels)
}

/// A [`TrackStore`] bundled with its configuration, fed frame by frame.
#[derive(Clone, Debug)]
pub struct Tracker {
    pub store: TrackStore,
    pub loss: LossConfig,
    pub config: TrackerConfig,
    next_frame: usize,
}

impl Tracker {
    pub fn new(loss: LossConfig, config: TrackerConfig) -> Result<Self, TrackError> {
        Ok(Self {
            store: TrackStore::new(config.life_span)?,
            loss,
            config,
            next_frame: 0,
        })
    }

    pub fn segment(&mut self, embedding: &Tensor<f64>, foreground: &[bool]) -> Result<InstanceLabelMap, TrackError> {
        let out = segment_frame(
            embedding,
            foreground,
            &mut self.store,
            self.next_frame,
            &self.loss,
            &self.config,
        )?;
        self.next_frame += 1;
        Ok(out)
    }
}

/// `[p, H, W]` slice of frame `t` from a `[p, T, H, W]` field.
pub fn field_frame(field: &Tensor<f64>, t: usize) -> Result<Tensor<f64>, TrackError> {
    let &[p, frames, h, w] = field.shape() else {
        return Err(TrackError::BadEmbedding {
            shape: field.shape().to_vec(),
            expected_dim: 0,
        });
    };
    assert!(t < frames, "frame {t} out of {frames}");
    let plane = h * w;
    let mut data = Vec::with_capacity(p * plane);
    for c in 0..p {
        let start = (c * frames + t) * plane;
        data.extend_from_slice(&field.data()[start..start + plane]);
    }
    Ok(Tensor::new(vec![p, h, w], data).expect("sizes agree"))
}

/// Runs a fresh tracker over every frame of a `[p, T, H, W]` field.
pub fn track_sequence(
    field: &Tensor<f64>,
    foreground: &[Vec<bool>],
    loss: &LossConfig,
    cfg: &TrackerConfig,
) -> Result<Vec<InstanceLabelMap>, TrackError> {
    let frames = match field.shape() {
        [_, t, _, _] => *t,
        _ => {
            return Err(TrackError::BadEmbedding {
                shape: field.shape().to_vec(),
                expected_dim: 0,
            })
        }
    };
    if foreground.len() != frames {
        return Err(TrackError::MaskSize {
            expected: frames,
            got: foreground.len(),
        });
    }
    let mut tracker = Tracker::new(*loss, *cfg)?;
    (0..frames)
        .map(|t| tracker.segment(&field_frame(field, t)?, &foreground[t]))
        .collect()
}
