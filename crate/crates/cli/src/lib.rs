//! The `stembed` command line tool.
//!
//! Every command returns `Ok(())` on success, [`CliError::Check`] when a
//! numerical check fails (exit code 1) and [`CliError::Input`] for bad
//! arguments or unreadable inputs (exit code 2).

pub mod commands;
pub mod files;
pub mod gradcheck;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("check failed: {0}")]
    Check(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Input(_) => 2,
        }
    }

    pub(crate) fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "stembed", version, about = "Spatio-temporal instance embeddings: synthetic scenes, tracking and evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replaces the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a scene manifest to frames, id maps, depth, masks and oracle embeddings.
    Gen {
        /// Scene manifest (JSON).
        spec: PathBuf,
        out_dir: PathBuf,
        /// Replaces the manifest's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Segment and track a sequence of embedding frames.
    Track {
        /// Directory of `embedding_NNNN.ste` frames shaped `[p, H, W]`.
        embedding_dir: PathBuf,
        /// Directory of `mask_NNNN.pgm` foreground masks.
        mask_dir: PathBuf,
        out_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score predicted id maps against ground truth; prints a JSON report.
    Eval {
        /// Directory of ground-truth `label_NNNN.pgm` id maps.
        gt_dir: PathBuf,
        /// Directory of predicted `label_NNNN.pgm` id maps.
        pred_dir: PathBuf,
        #[arg(long, default_value_t = stembed_core::mots_metrics::DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
    },
    /// Compare analytic loss gradients with finite differences.
    CheckGrads {
        #[arg(long, default_value_t = 5)]
        trials: usize,
        /// Negates the analytic gradients; exercises the failure path.
        #[arg(long, hide = true)]
        flip_sign: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Time cached streaming against batch recomputation of the causal stack.
    BenchStream {
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[command(flatten)]
        common: Common,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Gen { spec, out_dir, seed } => commands::gen(&spec, &out_dir, seed),
        Command::Track {
            embedding_dir,
            mask_dir,
            out_dir,
            common,
        } => {
            let cfg = commands::load_config(&common)?;
            commands::track(&embedding_dir, &mask_dir, &out_dir, &cfg)
        }
        Command::Eval {
            gt_dir,
            pred_dir,
            iou_threshold,
        } => commands::eval(&gt_dir, &pred_dir, iou_threshold),
        Command::CheckGrads {
            trials,
            flip_sign,
            common,
        } => {
            let cfg = commands::load_config(&common)?;
            commands::check_grads(&cfg, common.seed.unwrap_or(0), trials, flip_sign)
        }
        Command::BenchStream {
            frames,
            height,
            width,
            common,
        } => {
            let cfg = commands::load_config(&common)?;
            commands::bench_stream(&cfg, frames, height, width, common.seed.unwrap_or(0))
        }
    }
}
