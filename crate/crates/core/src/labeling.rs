//! Automatic ground-truth generation: background subtraction, EE box
//! extraction from a known calibration, and nearest-point keypoint tags.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, Label, PointCloud, Pose, NO_KEYPOINT};
use crate::simulator::Aabb;
use crate::spatial::KdTree;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelingConfig {
    pub background_match_radius: f64,
    pub keypoint_distance_threshold: f64,
    pub ee_bbox_inflation: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        Self {
            background_match_radius: 0.005,
            keypoint_distance_threshold: 0.01,
            ee_bbox_inflation: 0.01,
        }
    }
}

impl LabelingConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("background_match_radius", self.background_match_radius),
            ("keypoint_distance_threshold", self.keypoint_distance_threshold),
            ("ee_bbox_inflation", self.ee_bbox_inflation),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("labeling.{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Labels every frame point Background if a background-only capture has a
/// point within `background_match_radius`, Arm otherwise.
pub fn subtract_background(frame: &PointCloud, background: &PointCloud, cfg: &LabelingConfig) -> Result<PointCloud> {
    if frame.is_empty() || background.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(&background.points);
    let labels = frame
        .points
        .iter()
        .map(|p| {
            if tree.any_within(p, cfg.background_match_radius) {
                Label::Background
            } else {
                Label::Arm
            }
        })
        .collect();
    let mut out = frame.clone();
    out.labels = Some(labels);
    Ok(out)
}

/// Promotes Arm points inside the (inflated) EE box, placed by
/// `t_c_b ∘ t_b_ee`, to EndEffector.
pub fn extract_ee_points(
    cloud: &PointCloud,
    t_c_b: &Pose,
    t_b_ee: &Pose,
    bbox: &Aabb,
    cfg: &LabelingConfig,
) -> Result<PointCloud> {
    let labels = cloud.labels.as_ref().ok_or(Error::MissingLabels)?;
    let ee_from_camera = compose(t_c_b, t_b_ee).inverse();
    let relabeled = cloud
        .points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            if l == Label::Arm && bbox.contains(&ee_from_camera.apply(p), cfg.ee_bbox_inflation) {
                Label::EndEffector
            } else {
                l
            }
        })
        .collect();
    let mut out = cloud.clone();
    out.labels = Some(relabeled);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeypointLabels {
    /// Per-point keypoint id, `NO_KEYPOINT` where untagged.
    pub ids: Vec<i32>,
    /// Reference keypoints that found no point within the threshold.
    pub missing: Vec<usize>,
}

/// Tags the EE point nearest to each reference keypoint (placed by
/// `ee_pose`) when it lies within `keypoint_distance_threshold`. A point
/// claimed by two keypoints goes to the lower keypoint index.
pub fn label_keypoints(
    ee: &PointCloud,
    ee_pose: &Pose,
    ref_keypoints: &[Point3<f64>],
    cfg: &LabelingConfig,
) -> Result<KeypointLabels> {
    if ee.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tree = KdTree::new(&ee.points);
    let mut ids = vec![NO_KEYPOINT; ee.len()];
    let mut missing = Vec::new();
    for (k, r) in ref_keypoints.iter().enumerate() {
        match tree.nearest_within(&ee_pose.apply(r), cfg.keypoint_distance_threshold) {
            Some((i, _)) if ids[i] == NO_KEYPOINT => ids[i] = k as i32,
            _ => missing.push(k),
        }
    }
    Ok(KeypointLabels { ids, missing })
}
