//! Keypoint matching: rigid least-squares fit of predicted named keypoints
//! to their reference positions on the gripper model.

use nalgebra::{Point3, Vector3};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kabsch_fit, PointCloud, Pose};
use crate::spatial::KdTree;

pub const MIN_KEYPOINTS: usize = 4;

/// A predicted keypoint: reference id and camera-frame position.
pub type KeypointPrediction = (usize, Point3<f64>);

/// Stand-in for a learned keypoint detector.
pub trait KeypointPredictor: Send + Sync {
    fn predict(
        &self,
        ee: &PointCloud,
        gt_ee_pose: Option<&Pose>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<KeypointPrediction>>;
}

/// Ground-truth keypoints visible in the EE cloud, jittered by isotropic
/// Gaussian noise, dropped independently, then snapped to the nearest EE
/// point.
#[derive(Clone, Copy, Debug)]
pub struct NoisyOracleKeypoints {
    pub sigma: f64,
    pub dropout: f64,
}

impl KeypointPredictor for NoisyOracleKeypoints {
    fn predict(
        &self,
        ee: &PointCloud,
        _gt_ee_pose: Option<&Pose>,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<KeypointPrediction>> {
        if ee.keypoint_ids.is_none() {
            return Err(Error::MissingGroundTruth);
        }
        if ee.is_empty() {
            return Ok(Vec::new());
        }
        let tree = KdTree::new(&ee.points);
        let noise = Normal::new(0.0, self.sigma).ok();
        let mut out = Vec::new();
        for (id, idx) in ee.keypoints() {
            let mut p = ee.points[idx];
            if let Some(n) = noise.filter(|_| self.sigma > 0.0) {
                p += Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            if rng.random::<f64>() < self.dropout {
                continue;
            }
            let (snap, _) = tree.nearest(&p).expect("non-empty tree");
            out.push((id, ee.points[snap]));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KpmConfig {
    /// Predictions farther than this from every EE point are discarded.
    pub quality_radius: f64,
}

impl Default for KpmConfig {
    fn default() -> Self {
        Self { quality_radius: 0.03 }
    }
}

/// Drops predictions with no EE point within `radius`.
pub fn quality_filter(predictions: &[KeypointPrediction], ee: &PointCloud, radius: f64) -> Vec<KeypointPrediction> {
    if ee.is_empty() {
        return Vec::new();
    }
    let tree = KdTree::new(&ee.points);
    predictions
        .iter()
        .filter(|(_, p)| tree.any_within(p, radius))
        .copied()
        .collect()
}

/// Fits the reference keypoints (EE frame) onto the predictions (camera
/// frame), yielding the EE pose in the camera.
pub fn kpm_pose(predictions: &[KeypointPrediction], ref_keypoints: &[Point3<f64>]) -> Result<Pose> {
    let mut seen = vec![false; ref_keypoints.len()];
    let mut source = Vec::with_capacity(predictions.len());
    let mut target = Vec::with_capacity(predictions.len());
    for &(id, p) in predictions {
        let Some(r) = ref_keypoints.get(id) else {
            return Err(Error::DegenerateGeometry(format!("unknown keypoint id {id}")));
        };
        if std::mem::replace(&mut seen[id], true) {
            return Err(Error::DegenerateGeometry(format!("keypoint id {id} predicted twice")));
        }
        source.push(*r);
        target.push(p);
    }
    if source.len() < MIN_KEYPOINTS {
        return Err(Error::TooFewKeypoints {
            got: source.len(),
            need: MIN_KEYPOINTS,
        });
    }
    kabsch_fit(&source, &target)
}
