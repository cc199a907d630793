use thiserror::Error;

use crate::causal_stream::StreamError;
use crate::clustering_tracker::TrackError;
use crate::config::ConfigError;
use crate::embedding_loss::LossError;
use crate::geometry::GeometryError;
use crate::io::FormatError;
use crate::mots_metrics::MetricsError;
use crate::numerics::NumericsError;
use crate::synthetic_scenes::SceneError;

/// Crate-wide error, wrapping the per-module error types.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
