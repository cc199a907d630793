use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};
use stembed_bench::{foreground_points, occlusion_field, wave_clip};
use stembed_core::causal_stream::{clip_frames, prefix_clip};
use stembed_core::clustering_tracker::{mean_shift_cluster, track_sequence, TrackerConfig};
use stembed_core::embedding_loss::total_instance_loss;
use stembed_core::{CausalBlockConfig, CausalStack, InstancePartition, LossConfig};

fn causal(c: &mut Criterion) {
    let cfg = CausalBlockConfig {
        channels: 32,
        temporal_kernel: 2,
        num_blocks: 4,
    };
    let stack = CausalStack::random(cfg, 0).unwrap();
    let (h, w) = (24, 32);
    let clip = wave_clip(cfg.channels, 16, h, w);
    let frames = clip_frames(&clip);

    let mut group = c.benchmark_group("causal");
    group.sample_size(20);
    group.bench_function("stream_one_frame", |b| {
        b.iter_batched(
            || {
                let mut state = stack.new_state(h, w);
                for f in &frames[..8] {
                    stack.forward_stream(f, &mut state).unwrap();
                }
                state
            },
            |mut state| black_box(stack.forward_stream(&frames[8], &mut state).unwrap()),
            BatchSize::SmallInput,
        )
    });
    for n in [1, 4, 16] {
        let prefix = prefix_clip(&clip, n);
        group.bench_with_input(BenchmarkId::new("batch_recompute", n), &prefix, |b, x| {
            b.iter(|| black_box(stack.forward_batch(x).unwrap()))
        });
    }
    group.finish();
}

fn loss(c: &mut Criterion) {
    let (_, labels, _, field) = occlusion_field(8, 0.3);
    let part = InstancePartition::from_labels(&labels[..5]);
    let window = stembed_core::Tensor::new(
        vec![8, 5, 64, 96],
        (0..8)
            .flat_map(|ch| {
                let at = ch * 10 * 64 * 96;
                field.data()[at..at + 5 * 64 * 96].to_vec()
            })
            .collect(),
    )
    .unwrap();
    let cfg = LossConfig::default();
    c.bench_function("instance_loss_with_gradient_8x5x64x96", |b| {
        b.iter(|| black_box(total_instance_loss(&window, &part, &cfg).unwrap()))
    });
}

fn clustering(c: &mut Criterion) {
    let (_, _, masks, field) = occlusion_field(8, 0.15);
    let points = foreground_points(&field, &masks[4], 4);
    let cfg = LossConfig::default();
    c.bench_function(&format!("mean_shift_{}_points", points.len()), |b| {
        b.iter(|| black_box(mean_shift_cluster(&points, cfg.rho_a, 0).unwrap()))
    });
    let mut group = c.benchmark_group("tracking");
    group.sample_size(10);
    group.bench_function("track_10_frames", |b| {
        b.iter(|| black_box(track_sequence(&field, &masks, &cfg, &TrackerConfig::default()).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, causal, loss, clustering);
criterion_main!(benches);
