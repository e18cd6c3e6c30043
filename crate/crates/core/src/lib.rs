//! Markerless depth-camera to robot-base extrinsic calibration.
//!
//! The crate bundles a synthetic capture simulator, point-cloud labeling,
//! two pose estimators (rotate-then-translate and keypoint matching), ICP
//! refinement, robust multi-frame aggregation and evaluation metrics.

pub mod calibration;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod icp;
pub mod json;
pub mod kpm;
pub mod labeling;
pub mod pipeline;
pub mod ply;
pub mod rpt;
pub mod seeds;
pub mod segmentation;
pub mod simulator;
pub mod spatial;

pub use error::{Error, Result};
pub use config::PipelineConfig;
pub use dataset::Dataset;
pub use geometry::{Label, PointCloud, Pose, Quaternion};
pub use pipeline::{CalibrationResult, Pipeline};
