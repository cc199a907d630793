//! Causal 3D residual convolution stack with batch and streaming inference.
//!
//! Each residual block is a `1×1×1` projection halving the channels, a causal
//! `t×3×3` convolution and a `1×1×1` projection restoring the channels; ReLU
//! follows the first two, and the block output is `x + up(...)`. The temporal
//! convolution at time `t` reads inputs `t − k + 1 ..= t` with zeros before
//! the first frame, and space is zero padded so extents never shrink.
//!
//! [`CausalStack::forward_stream`] keeps the last `k − 1` inputs of each
//! temporal convolution in a [`StreamState`], so a new frame costs the same no
//! matter how long the stream has been running.
//!
//! Weight layout of the temporal kernel is `[out, in, dt, ky, kx]` with
//! `dt = k − 1` addressing the current frame.

use std::collections::VecDeque;
use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{read_dump, write_dump, NumericsError, Tensor};

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("stream state was created for a different stack or frame size")]
    StateMismatch,
    #[error("weight file error: {0}")]
    Weights(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalBlockConfig {
    pub channels: usize,
    pub temporal_kernel: usize,
    pub num_blocks: usize,
}

impl Default for CausalBlockConfig {
    fn default() -> Self {
        Self {
            channels: 128,
            temporal_kernel: 2,
            num_blocks: 12,
        }
    }
}

pub const SPATIAL_KERNEL: usize = 3;

impl CausalBlockConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.channels < 2 || !self.channels.is_multiple_of(2) {
            return Err(StreamError::BadConfig(format!(
                "channels must be a positive even number, got {}",
                self.channels
            )));
        }
        if self.temporal_kernel == 0 || self.num_blocks == 0 {
            return Err(StreamError::BadConfig(
                "temporal_kernel and num_blocks must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Channels inside a block.
    pub fn mid_channels(&self) -> usize {
        self.channels / 2
    }

    fn taps(&self) -> usize {
        self.mid_channels() * self.temporal_kernel * SPATIAL_KERNEL * SPATIAL_KERNEL
    }
}

/// Parameters of one residual block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    /// `[mid, C]`
    pub down_w: Vec<f32>,
    pub down_b: Vec<f32>,
    /// `[mid, mid, k, 3, 3]`
    pub conv_w: Vec<f32>,
    pub conv_b: Vec<f32>,
    /// `[C, mid]`
    pub up_w: Vec<f32>,
    pub up_b: Vec<f32>,
}

impl BlockWeights {
    fn zeros(cfg: &CausalBlockConfig) -> Self {
        let (c, m) = (cfg.channels, cfg.mid_channels());
        Self {
            down_w: vec![0.0; m * c],
            down_b: vec![0.0; m],
            conv_w: vec![0.0; m * cfg.taps()],
            conv_b: vec![0.0; m],
            up_w: vec![0.0; c * m],
            up_b: vec![0.0; c],
        }
    }

    fn shapes(cfg: &CausalBlockConfig) -> [(&'static str, Vec<usize>); 6] {
        let (c, m, k) = (cfg.channels, cfg.mid_channels(), cfg.temporal_kernel);
        [
            ("down.weight", vec![m, c]),
            ("down.bias", vec![m]),
            ("conv.weight", vec![m, m, k, SPATIAL_KERNEL, SPATIAL_KERNEL]),
            ("conv.bias", vec![m]),
            ("up.weight", vec![c, m]),
            ("up.bias", vec![c]),
        ]
    }

    fn params(&self) -> [&Vec<f32>; 6] {
        [
            &self.down_w,
            &self.down_b,
            &self.conv_w,
            &self.conv_b,
            &self.up_w,
            &self.up_b,
        ]
    }

    fn params_mut(&mut self) -> [&mut Vec<f32>; 6] {
        [
            &mut self.down_w,
            &mut self.down_b,
            &mut self.conv_w,
            &mut self.conv_b,
            &mut self.up_w,
            &mut self.up_b,
        ]
    }
}

/// The residual stack: configuration plus weights for every block.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalStack {
    cfg: CausalBlockConfig,
    blocks: Vec<BlockWeights>,
}

#[derive(Serialize, Deserialize)]
struct WeightManifest {
    config: CausalBlockConfig,
    /// Tensor names in layer order; each lives in `<name>.ste`.
    layers: Vec<String>,
}

fn mat_mul(a: &[f32], rows: usize, inner: usize, b: &[f32], cols: usize, out: &mut [f32], beta: f32) {
    let a = ArrayView2::from_shape((rows, inner), a).expect("lhs extents");
    let b = ArrayView2::from_shape((inner, cols), b).expect("rhs extents");
    let mut c = ArrayViewMut2::from_shape((rows, cols), out).expect("out extents");
    general_mat_mul(1.0, &a, &b, beta, &mut c);
}

fn add_bias(out: &mut [f32], bias: &[f32], plane: usize, relu: bool) {
    for (row, b) in out.chunks_exact_mut(plane).zip(bias) {
        for v in row {
            *v += b;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Scratch buffers reused across frames.
struct Workspace {
    cols: Vec<f32>,
    mid: Vec<f32>,
    up: Vec<f32>,
}

impl Workspace {
    fn new(cfg: &CausalBlockConfig, plane: usize) -> Self {
        Self {
            cols: vec![0.0; cfg.taps() * plane],
            mid: vec![0.0; cfg.mid_channels() * plane],
            up: vec![0.0; cfg.channels * plane],
        }
    }
}

impl CausalStack {
    pub fn zeros(cfg: CausalBlockConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            blocks: (0..cfg.num_blocks).map(|_| BlockWeights::zeros(&cfg)).collect(),
        })
    }

    /// Uniform fan-in scaled initialisation; the restoring projection is kept
    /// small so activations stay bounded through many residual blocks.
    pub fn random(cfg: CausalBlockConfig, seed: u64) -> Result<Self, StreamError> {
        let mut stack = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, m) = (cfg.channels as f32, cfg.mid_channels() as f32);
        let taps = cfg.taps() as f32;
        for block in &mut stack.blocks {
            let scales = [
                (3.0 / c).sqrt(),
                0.1,
                (3.0 / taps).sqrt(),
                0.1,
                0.5 * (3.0 / m).sqrt(),
                0.1,
            ];
            for (param, scale) in block.params_mut().into_iter().zip(scales) {
                for v in param.iter_mut() {
                    *v = rng.random_range(-scale..scale);
                }
            }
        }
        Ok(stack)
    }

    pub fn from_blocks(cfg: CausalBlockConfig, blocks: Vec<BlockWeights>) -> Result<Self, StreamError> {
        cfg.validate()?;
        if blocks.len() != cfg.num_blocks {
            return Err(StreamError::BadConfig(format!(
                "{} blocks given for num_blocks = {}",
                blocks.len(),
                cfg.num_blocks
            )));
        }
        let zero = BlockWeights::zeros(&cfg);
        for block in &blocks {
            for (have, want) in block.params().iter().zip(zero.params()) {
                if have.len() != want.len() {
                    return Err(StreamError::BadConfig("block weight size mismatch".into()));
                }
            }
        }
        Ok(Self { cfg, blocks })
    }

    pub fn config(&self) -> &CausalBlockConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &[BlockWeights] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [BlockWeights] {
        &mut self.blocks
    }

    /// Temporal convolution of one output frame. `history` holds the
    /// `k` input frames oldest first, `None` for zero padding.
    fn conv_frame(&self, block: &BlockWeights, history: &[Option<&[f32]>], h: usize, w: usize, ws: &mut Workspace) {
        let k = self.cfg.temporal_kernel;
        let m = self.cfg.mid_channels();
        let plane = h * w;
        debug_assert_eq!(history.len(), k);
        // im2col: row ((i k + dt) 3 + ky) 3 + kx, column y w + x
        let mut row = 0;
        for i in 0..m {
            for frame in history {
                for ky in 0..SPATIAL_KERNEL {
                    for kx in 0..SPATIAL_KERNEL {
                        let dst = &mut ws.cols[row * plane..(row + 1) * plane];
                        row += 1;
                        let Some(src) = frame else {
                            dst.fill(0.0);
                            continue;
                        };
                        let src = &src[i * plane..(i + 1) * plane];
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            let out = &mut dst[y * w..(y + 1) * w];
                            if sy < 0 || sy >= h as isize {
                                out.fill(0.0);
                                continue;
                            }
                            let src_row = &src[sy as usize * w..(sy as usize + 1) * w];
                            match kx {
                                0 => {
                                    out[0] = 0.0;
                                    out[1..].copy_from_slice(&src_row[..w - 1]);
                                }
                                1 => out.copy_from_slice(src_row),
                                _ => {
                                    out[..w - 1].copy_from_slice(&src_row[1..]);
                                    out[w - 1] = 0.0;
                                }
                            }
                        }
                    }
                }
            }
        }
        mat_mul(&block.conv_w, m, self.cfg.taps(), &ws.cols, plane, &mut ws.mid, 0.0);
        add_bias(&mut ws.mid, &block.conv_b, plane, true);
    }

    fn down(&self, block: &BlockWeights, x: &[f32], plane: usize, out: &mut [f32]) {
        mat_mul(&block.down_w, self.cfg.mid_channels(), self.cfg.channels, x, plane, out, 0.0);
        add_bias(out, &block.down_b, plane, true);
    }

    /// Adds the restoring projection of `ws.mid` into `x` in place.
    fn up_residual(&self, block: &BlockWeights, x: &mut [f32], plane: usize, ws: &mut Workspace) {
        mat_mul(&block.up_w, self.cfg.channels, self.cfg.mid_channels(), &ws.mid, plane, &mut ws.up, 0.0);
        for ((xv, u), b) in x.chunks_exact_mut(plane).zip(ws.up.chunks_exact(plane)).zip(&block.up_b) {
            for (a, v) in xv.iter_mut().zip(u) {
                *a += v + b;
            }
        }
    }

    /// Full recomputation over a clip `[C, T, H, W]`.
    pub fn forward_batch(&self, x: &Tensor<f32>) -> Result<Tensor<f32>, StreamError> {
        let [c, t, h, w] = match *x.shape() {
            [c, t, h, w] if c == self.cfg.channels => [c, t, h, w],
            _ => {
                return Err(StreamError::Shape {
                    expected: vec![self.cfg.channels, 0, 0, 0],
                    actual: x.shape().to_vec(),
                })
            }
        };
        let plane = h * w;
        let m = self.cfg.mid_channels();
        let k = self.cfg.temporal_kernel;
        // frame-major working copy: frames[t] is [C, H*W]
        let mut frames: Vec<Vec<f32>> = (0..t)
            .map(|ti| {
                let mut f = Vec::with_capacity(c * plane);
                for ci in 0..c {
                    let at = (ci * t + ti) * plane;
                    f.extend_from_slice(&x.data()[at..at + plane]);
                }
                f
            })
            .collect();
        let mut ws = Workspace::new(&self.cfg, plane);
        let mut inner: Vec<Vec<f32>> = vec![vec![0.0; m * plane]; t];
        for block in &self.blocks {
            for (frame, out) in frames.iter().zip(inner.iter_mut()) {
                self.down(block, frame, plane, out);
            }
            for ti in 0..t {
                let history: Vec<Option<&[f32]>> = (0..k)
                    .map(|dt| (ti + dt + 1).checked_sub(k).map(|s| inner[s].as_slice()))
                    .collect();
                self.conv_frame(block, &history, h, w, &mut ws);
                self.up_residual(block, &mut frames[ti], plane, &mut ws);
            }
        }
        let mut out = vec![0.0; x.len()];
        for (ti, frame) in frames.iter().enumerate() {
            for ci in 0..c {
                let at = (ci * t + ti) * plane;
                out[at..at + plane].copy_from_slice(&frame[ci * plane..(ci + 1) * plane]);
            }
        }
        Ok(Tensor::new(x.shape().to_vec(), out)?)
    }

    /// A fresh stream state for `height × width` frames: every buffer holds
    /// `k − 1` zero slices, matching the batch path's zero padding.
    pub fn new_state(&self, height: usize, width: usize) -> StreamState {
        let slice = self.cfg.mid_channels() * height * width;
        StreamState {
            cfg: self.cfg,
            height,
            width,
            buffers: (0..self.cfg.num_blocks)
                .map(|_| (0..self.cfg.temporal_kernel - 1).map(|_| vec![0.0; slice]).collect())
                .collect(),
            frames_seen: 0,
        }
    }

    /// Processes the next frame `[C, H, W]` of a stream.
    pub fn forward_stream(&self, frame: &Tensor<f32>, state: &mut StreamState) -> Result<Tensor<f32>, StreamError> {
        let [c, h, w] = match *frame.shape() {
            [c, h, w] if c == self.cfg.channels => [c, h, w],
            _ => {
                return Err(StreamError::Shape {
                    expected: vec![self.cfg.channels, state.height, state.width],
                    actual: frame.shape().to_vec(),
                })
            }
        };
        if state.cfg != self.cfg || state.height != h || state.width != w || state.buffers.len() != self.blocks.len() {
            return Err(StreamError::StateMismatch);
        }
        let plane = h * w;
        let m = self.cfg.mid_channels();
        let mut x = frame.data().to_vec();
        let mut ws = Workspace::new(&self.cfg, plane);
        for (block, buffer) in self.blocks.iter().zip(state.buffers.iter_mut()) {
            let mut current = vec![0.0; m * plane];
            self.down(block, &x, plane, &mut current);
            {
                let history: Vec<Option<&[f32]>> = buffer
                    .iter()
                    .map(|s| Some(s.as_slice()))
                    .chain(std::iter::once(Some(current.as_slice())))
                    .collect();
                self.conv_frame(block, &history, h, w, &mut ws);
            }
            self.up_residual(block, &mut x, plane, &mut ws);
            if self.cfg.temporal_kernel > 1 {
                buffer.pop_front();
                buffer.push_back(current);
            }
        }
        state.frames_seen += 1;
        Ok(Tensor::new(vec![c, h, w], x)?)
    }

    /// Writes `manifest.json` plus one tensor dump per parameter into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), StreamError> {
        fs::create_dir_all(dir)?;
        let mut layers = Vec::new();
        for (b, block) in self.blocks.iter().enumerate() {
            for ((name, shape), data) in BlockWeights::shapes(&self.cfg).into_iter().zip(block.params()) {
                let full = format!("block{b:02}.{name}");
                let tensor = Tensor::new(shape, data.clone())?;
                let file = fs::File::create(dir.join(format!("{full}.ste")))?;
                write_dump(BufWriter::new(file), &tensor)?;
                layers.push(full);
            }
        }
        let manifest = WeightManifest {
            config: self.cfg,
            layers,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| StreamError::Weights(e.to_string()))?;
        fs::write(dir.join("manifest.json"), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, StreamError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        let manifest: WeightManifest =
            serde_json::from_str(&text).map_err(|e| StreamError::Weights(format!("manifest: {e}")))?;
        let cfg = manifest.config;
        let mut stack = Self::zeros(cfg)?;
        let expected = cfg.num_blocks * 6;
        if manifest.layers.len() != expected {
            return Err(StreamError::Weights(format!(
                "manifest lists {} layers, expected {expected}",
                manifest.layers.len()
            )));
        }
        let mut names = manifest.layers.iter();
        for (b, block) in stack.blocks.iter_mut().enumerate() {
            for ((name, shape), param) in BlockWeights::shapes(&cfg).into_iter().zip(block.params_mut()) {
                let listed = names.next().expect("length checked");
                let want = format!("block{b:02}.{name}");
                if *listed != want {
                    return Err(StreamError::Weights(format!("expected layer {want}, found {listed}")));
                }
                let file = fs::File::open(dir.join(format!("{listed}.ste")))?;
                let tensor = read_dump(BufReader::new(file))?;
                if tensor.shape() != shape.as_slice() {
                    return Err(StreamError::Shape {
                        expected: shape,
                        actual: tensor.shape().to_vec(),
                    });
                }
                *param = tensor.into_data();
            }
        }
        Ok(stack)
    }
}

/// Per-block ring buffers of the last `k − 1` temporal-convolution inputs.
#[derive(Clone, Debug)]
pub struct StreamState {
    cfg: CausalBlockConfig,
    height: usize,
    width: usize,
    buffers: Vec<VecDeque<Vec<f32>>>,
    frames_seen: usize,
}

impl StreamState {
    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Number of cached slices in each block's buffer.
    pub fn buffer_lengths(&self) -> Vec<usize> {
        self.buffers.iter().map(VecDeque::len).collect()
    }

    /// Total cached floats; constant over the life of a stream.
    pub fn cached_values(&self) -> usize {
        self.buffers.iter().flatten().map(Vec::len).sum()
    }
}

/// Splits a clip `[C, T, H, W]` into its frames `[C, H, W]`.
pub fn clip_frames(x: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let [c, t, h, w] = match *x.shape() {
        [c, t, h, w] => [c, t, h, w],
        _ => panic!("clip must be rank 4"),
    };
    let plane = h * w;
    (0..t)
        .map(|ti| {
            let mut data = Vec::with_capacity(c * plane);
            for ci in 0..c {
                let at = (ci * t + ti) * plane;
                data.extend_from_slice(&x.data()[at..at + plane]);
            }
            Tensor::new(vec![c, h, w], data).expect("frame extents")
        })
        .collect()
}

/// Frame `ti` of a clip output, for comparison with a streamed frame.
pub fn clip_frame(x: &Tensor<f32>, ti: usize) -> Tensor<f32> {
    clip_frames(x).swap_remove(ti)
}

/// Latencies of cached streaming versus full recomputation.
#[derive(Clone, Debug)]
pub struct StreamBenchmark {
    /// Wall time of each streamed frame, milliseconds.
    pub stream_ms: Vec<f64>,
    /// `(n, ms)`: time to recompute the whole prefix of `n` frames in batch.
    pub recompute_ms: Vec<(usize, f64)>,
    /// Largest absolute difference between streamed and batch outputs.
    pub max_diff: f64,
}

impl StreamBenchmark {
    /// Median streamed latency over the `span` frames ending at 1-based
    /// frame `n`.
    pub fn stream_latency_at(&self, n: usize, span: usize) -> f64 {
        let end = n.min(self.stream_ms.len());
        let start = end.saturating_sub(span.max(1));
        let mut window: Vec<f64> = self.stream_ms[start..end].to_vec();
        window.sort_by(f64::total_cmp);
        window[window.len() / 2]
    }

    pub fn recompute_latency_at(&self, n: usize) -> Option<f64> {
        self.recompute_ms.iter().find(|(m, _)| *m == n).map(|&(_, ms)| ms)
    }
}

/// Streams `frames` random inputs through `stack`, timing every frame, and
/// times batch recomputation of the prefixes listed in `checkpoints`. The
/// largest checkpoint (or the full clip) doubles as the equivalence oracle.
pub fn benchmark_stream(
    stack: &CausalStack,
    frames: usize,
    height: usize,
    width: usize,
    checkpoints: &[usize],
    seed: u64,
) -> Result<StreamBenchmark, StreamError> {
    let c = stack.config().channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = Tensor::from_fn(&[c, frames, height, width], |_| rng.random_range(-1.0f32..1.0))?;
    let inputs = clip_frames(&clip);

    let mut state = stack.new_state(height, width);
    let mut stream_ms = Vec::with_capacity(frames);
    let mut streamed = Vec::with_capacity(frames);
    for frame in &inputs {
        let start = Instant::now();
        let out = stack.forward_stream(frame, &mut state)?;
        stream_ms.push(start.elapsed().as_secs_f64() * 1e3);
        streamed.push(out);
    }

    let mut recompute_ms = Vec::new();
    let mut points: Vec<usize> = checkpoints.iter().copied().filter(|&n| n >= 1 && n <= frames).collect();
    points.sort_unstable();
    points.dedup();
    if points.last() != Some(&frames) {
        points.push(frames);
    }
    let mut full = None;
    for &n in &points {
        let prefix = prefix_clip(&clip, n);
        let start = Instant::now();
        let out = stack.forward_batch(&prefix)?;
        recompute_ms.push((n, start.elapsed().as_secs_f64() * 1e3));
        if n == frames {
            full = Some(out);
        }
    }
    let full = full.expect("full clip is always a checkpoint");
    let max_diff = clip_frames(&full)
        .iter()
        .zip(&streamed)
        .map(|(b, s)| b.max_abs_diff(s))
        .fold(0.0, f64::max);
    Ok(StreamBenchmark {
        stream_ms,
        recompute_ms,
        max_diff,
    })
}

/// The first `n` frames of a clip.
pub fn prefix_clip(x: &Tensor<f32>, n: usize) -> Tensor<f32> {
    let [c, t, h, w] = match *x.shape() {
        [c, t, h, w] => [c, t, h, w],
        _ => panic!("clip must be rank 4"),
    };
    assert!(n >= 1 && n <= t, "prefix length out of range");
    let plane = h * w;
    let mut data = Vec::with_capacity(c * n * plane);
    for ci in 0..c {
        let at = ci * t * plane;
        data.extend_from_slice(&x.data()[at..at + n * plane]);
    }
    Tensor::new(vec![c, n, h, w], data).expect("prefix extents")
}
