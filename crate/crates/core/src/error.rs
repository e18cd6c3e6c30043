use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("empty input")]
    EmptyInput,
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("end effector is outside the camera frustum")]
    EeOutsideFrustum,
    #[error("no cluster holds at least {min_fraction} of the {total} points")]
    NoValidCluster { total: usize, min_fraction: f64 },
    #[error("too few points: {got} < {need}")]
    TooFewPoints { got: usize, need: usize },
    #[error("too few keypoints: {got} < {need}")]
    TooFewKeypoints { got: usize, need: usize },
    #[error("no correspondences within {max_distance} m at the initial pose")]
    NoCorrespondences { max_distance: f64 },
    #[error("no usable frames: all {total} frames were rejected")]
    NoUsableFrames { total: usize },
    #[error("ground truth calibration is required but missing from the manifest")]
    MissingGroundTruth,
    #[error("point cloud carries no labels")]
    MissingLabels,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed PLY {path}: {reason}")]
    Ply { path: PathBuf, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
