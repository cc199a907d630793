//! Spatio-temporal instance embeddings for video instance segmentation.
//!
//! The crate bundles the pieces needed to train-free validate and run an
//! embedding based video instance segmenter:
//!
//! * [`embedding_loss`]: attraction / repulsion / regularisation losses over
//!   video-pixels with analytic gradients.
//! * [`geometry`]: pinhole back-projection, SE(3) warping, bilinear sampling,
//!   photometric error and the minimum reprojection loss with its depth
//!   gradient.
//! * [`causal_stream`]: a causal 3D residual convolution stack with batch and
//!   cached streaming inference.
//! * [`clustering_tracker`]: mean-shift clustering and track association by
//!   mean embedding distance.
//! * [`mots_metrics`]: MOTSP / MOTSA / sMOTSA evaluation.
//! * [`synthetic_scenes`]: deterministic toy sequences with occlusions and
//!   oracle embedding fields.
//! * [`numerics`] and [`io`]: tensor storage, finite differences and the file
//!   formats shared by the command line tool.

// `!(x > 0.0)` also rejects NaN; index loops mirror the maths
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod causal_stream;
pub mod clustering_tracker;
pub mod config;
pub mod embedding_loss;
pub mod error;
pub mod geometry;
pub mod io;
pub mod labels;
pub mod mots_metrics;
pub mod numerics;
pub mod synthetic_scenes;

pub use causal_stream::{CausalBlockConfig, CausalStack, StreamState};
pub use clustering_tracker::{ClusterResult, MeanShiftParams, TrackStore};
pub use config::RunConfig;
pub use embedding_loss::{InstanceMeans, InstancePartition, LossConfig};
pub use error::{Error, Result};
pub use geometry::{CameraModel, DepthMap, Image, PhotometricConfig, PoseSE3};
pub use labels::{InstanceLabelMap, VideoPixel};
pub use mots_metrics::{MotsReport, ObjectMask};
pub use numerics::Tensor;
pub use synthetic_scenes::{OracleEmbeddingSpec, SceneSpec};
