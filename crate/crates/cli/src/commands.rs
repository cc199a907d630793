use std::path::Path;

use serde_json::json;
use stembed_core::causal_stream::benchmark_stream;
use stembed_core::clustering_tracker::{field_frame, Tracker};
use stembed_core::io::{load_id_map, load_mask, save_id_map, save_mask, save_pfm, save_ppm};
use stembed_core::mots_metrics::evaluate_label_maps;
use stembed_core::synthetic_scenes::{oracle_embeddings, render_sequence};
use stembed_core::{CausalStack, RunConfig, SceneSpec, Tensor};

use crate::files::{frame_path, list_frames, load_tensor, save_tensor};
use crate::gradcheck::{check_gradients, EMBEDDING_TOLERANCE, GEOMETRY_TOLERANCE};
use crate::{CliError, Common};

/// Streamed and batch outputs must agree this closely.
pub const STREAM_TOLERANCE: f64 = 1e-5;

pub fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let cfg = RunConfig::load(common.config.as_deref()).map_err(CliError::input)?;
    Ok(cfg.with_seed(common.seed))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))
}

pub fn gen(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(spec_path).map_err(|e| CliError::Input(format!("{}: {e}", spec_path.display())))?;
    let mut spec = SceneSpec::from_json(&text).map_err(CliError::input)?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let out = render_sequence(&spec).map_err(CliError::input)?;
    for w in &out.warnings {
        eprintln!("warning: {w}");
    }
    create_dir(out_dir)?;
    let (h, w) = (spec.height, spec.width);
    for t in 0..spec.frames {
        save_ppm(&frame_path(out_dir, "frame", "ppm", t), &out.frames[t]).map_err(CliError::input)?;
        save_id_map(&frame_path(out_dir, "label", "pgm", t), &out.labels[t]).map_err(CliError::input)?;
        save_pfm(&frame_path(out_dir, "depth", "pfm", t), &out.depths[t]).map_err(CliError::input)?;
        save_mask(&frame_path(out_dir, "mask", "pgm", t), h, w, &out.predicted_masks[t]).map_err(CliError::input)?;
    }
    if let Some(ospec) = &spec.embedding {
        let field = oracle_embeddings(&out.labels, ospec, spec.seed).map_err(CliError::input)?;
        for t in 0..spec.frames {
            let frame = field_frame(&field, t).map_err(CliError::input)?;
            save_tensor(&frame_path(out_dir, "embedding", "ste", t), &frame)?;
        }
    }
    std::fs::write(out_dir.join("manifest.json"), spec.to_json()).map_err(CliError::input)?;
    eprintln!("wrote {} frames to {}", spec.frames, out_dir.display());
    Ok(())
}

pub fn track(embedding_dir: &Path, mask_dir: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let embeddings = list_frames(embedding_dir, "embedding", "ste")?;
    let masks = list_frames(mask_dir, "mask", "pgm")?;
    if embeddings.len() != masks.len() {
        return Err(CliError::Input(format!(
            "{} embedding frames but {} masks",
            embeddings.len(),
            masks.len()
        )));
    }
    create_dir(out_dir)?;
    let mut tracker = Tracker::new(cfg.loss, cfg.tracker).map_err(CliError::input)?;
    for (t, (e, m)) in embeddings.iter().zip(&masks).enumerate() {
        let y: Tensor<f64> = load_tensor(e)?.to_f64();
        let (h, w, mask) = load_mask(m).map_err(CliError::input)?;
        if y.shape().len() != 3 || y.shape()[1..] != [h, w] {
            return Err(CliError::Input(format!(
                "frame {t}: embedding shape {:?} does not match {h}x{w} mask",
                y.shape()
            )));
        }
        let labels = tracker.segment(&y, &mask).map_err(|e| CliError::Input(format!("frame {t}: {e}")))?;
        save_id_map(&frame_path(out_dir, "label", "pgm", t), &labels).map_err(CliError::input)?;
    }
    eprintln!("tracked {} frames into {}", embeddings.len(), out_dir.display());
    Ok(())
}

pub fn eval(gt_dir: &Path, pred_dir: &Path, threshold: f64) -> Result<(), CliError> {
    if !(0.0..1.0).contains(&threshold) {
        return Err(CliError::Input(format!("iou threshold {threshold} outside [0, 1)")));
    }
    let gt_files = list_frames(gt_dir, "label", "pgm")?;
    let pred_files = list_frames(pred_dir, "label", "pgm")?;
    if gt_files.len() != pred_files.len() {
        return Err(CliError::Input(format!(
            "{} ground-truth frames but {} predicted",
            gt_files.len(),
            pred_files.len()
        )));
    }
    let load = |files: &[std::path::PathBuf]| {
        files
            .iter()
            .map(|p| load_id_map(p).map_err(CliError::input))
            .collect::<Result<Vec<_>, _>>()
    };
    let report = evaluate_label_maps(&load(&gt_files)?, &load(&pred_files)?, threshold).map_err(CliError::input)?;
    println!("{}", report.to_json());
    Ok(())
}

pub fn check_grads(cfg: &RunConfig, seed: u64, trials: usize, flip_sign: bool) -> Result<(), CliError> {
    if trials == 0 {
        eprintln!("no trials requested; nothing checked");
        println!("{}", json!({ "trials": 0, "passed": true }));
        return Ok(());
    }
    let r = check_gradients(&cfg.loss, &cfg.photometric, seed, trials, flip_sign);
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "trials": r.trials,
            "seed": seed,
            "max_rel_err": {
                "attraction": r.attraction,
                "repulsion": r.repulsion,
                "regularisation": r.regularisation,
                "instance": r.instance,
                "depth": r.depth,
            },
            "tolerance": { "embedding": EMBEDDING_TOLERANCE, "depth": GEOMETRY_TOLERANCE },
            "depth_coords_skipped": r.depth_skipped,
            "depth_coords": r.depth_coords,
            "passed": r.passed(),
        }))
        .expect("json")
    );
    if r.passed() {
        Ok(())
    } else {
        Err(CliError::Check(format!(
            "max relative error {:.3e} (embedding) / {:.3e} (depth)",
            r.embedding_max(),
            r.depth
        )))
    }
}

pub fn bench_stream(cfg: &RunConfig, frames: usize, height: usize, width: usize, seed: u64) -> Result<(), CliError> {
    if frames == 0 || height == 0 || width == 0 {
        return Err(CliError::Input("frames, height and width must be positive".into()));
    }
    let stack = CausalStack::random(cfg.causal, seed).map_err(CliError::input)?;
    let mut checkpoints: Vec<usize> = [1, 2, 4, 8, 16, 32, 64, 128].into_iter().filter(|&n| n <= frames).collect();
    checkpoints.push(frames);
    checkpoints.dedup();
    let bench = benchmark_stream(&stack, frames, height, width, &checkpoints, seed).map_err(CliError::input)?;

    eprintln!("{:>6} {:>14} {:>16}", "frame", "stream (ms)", "recompute (ms)");
    let rows: Vec<_> = checkpoints
        .iter()
        .map(|&n| {
            let stream = bench.stream_ms[n - 1];
            let recompute = bench.recompute_latency_at(n).unwrap_or(f64::NAN);
            eprintln!("{n:>6} {stream:>14.3} {recompute:>16.3}");
            json!({ "frame": n, "stream_ms": stream, "recompute_ms": recompute })
        })
        .collect();
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "frames": frames,
            "height": height,
            "width": width,
            "channels": cfg.causal.channels,
            "blocks": cfg.causal.num_blocks,
            "temporal_kernel": cfg.causal.temporal_kernel,
            "rows": rows,
            "max_diff": bench.max_diff,
        }))
        .expect("json")
    );
    if bench.max_diff < STREAM_TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Check(format!("stream and batch differ by {:.3e}", bench.max_diff)))
    }
}
