//! Rotation prediction + transform: recover the EE translation from a
//! predicted rotation and the axis extents of the de-rotated EE points.

use nalgebra::{Point3, Unit, Vector3};
use rand::RngCore;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose, Quaternion};
use crate::simulator::RptDescriptor;

pub const MIN_RPT_POINTS: usize = 10;

/// Stand-in for a learned EE rotation regressor.
pub trait RotationPredictor: Send + Sync {
    /// `gt_ee_pose` is only consulted by oracle implementations.
    fn predict(&self, ee: &PointCloud, gt_ee_pose: Option<&Pose>, rng: &mut dyn RngCore) -> Result<Quaternion>;
}

/// Ground-truth rotation perturbed by a rotation about a uniformly random
/// axis with angle drawn from `N(0, sigma)`.
#[derive(Clone, Copy, Debug)]
pub struct NoisyOracleRotation {
    pub sigma: f64,
}

impl RotationPredictor for NoisyOracleRotation {
    fn predict(&self, _ee: &PointCloud, gt_ee_pose: Option<&Pose>, rng: &mut dyn RngCore) -> Result<Quaternion> {
        let gt = gt_ee_pose.ok_or(Error::MissingGroundTruth)?;
        if self.sigma == 0.0 {
            return Ok(gt.rotation);
        }
        Ok(random_rotation(self.sigma, rng) * gt.rotation)
    }
}

/// Rotation by `N(0, sigma)` radians about a uniformly distributed axis.
pub fn random_rotation(sigma: f64, rng: &mut dyn RngCore) -> Quaternion {
    let axis = loop {
        let mut normal = || -> f64 { StandardNormal.sample(rng) };
        let v = Vector3::new(normal(), normal(), normal());
        if let Some(a) = Unit::try_new(v, 1e-9) {
            break a;
        }
    };
    let angle = Normal::new(0.0, sigma).map(|n| n.sample(rng)).unwrap_or(0.0);
    Quaternion::from_axis_angle(&axis, angle)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RptConfig {
    /// Fraction of the most extreme points ignored at each end of every
    /// axis when the input is noisy.
    pub extent_trim_fraction: f64,
}

impl Default for RptConfig {
    fn default() -> Self {
        Self {
            extent_trim_fraction: 0.002,
        }
    }
}

/// Applies the inverse of `rotation` to every point.
pub fn rotate_back(ee: &PointCloud, rotation: &Quaternion) -> PointCloud {
    let inv = rotation.inverse();
    let mut out = ee.clone();
    for p in &mut out.points {
        *p = inv * *p;
    }
    out
}

fn trimmed_extent(values: &mut [f64], trim_fraction: f64) -> (f64, f64) {
    values.sort_unstable_by(f64::total_cmp);
    let k = ((values.len() as f64) * trim_fraction).floor() as usize;
    let k = k.min((values.len() - 1) / 2);
    (values[k], values[values.len() - 1 - k])
}

/// EE origin in the de-rotated frame from the per-axis extents of
/// `rotated`, as prescribed by `descriptor`.
pub fn rpt_local_translation(
    rotated: &[Point3<f64>],
    descriptor: &RptDescriptor,
    trim_fraction: f64,
) -> Result<Vector3<f64>> {
    if rotated.len() < MIN_RPT_POINTS {
        return Err(Error::TooFewPoints {
            got: rotated.len(),
            need: MIN_RPT_POINTS,
        });
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut column = Vec::with_capacity(rotated.len());
    for axis in 0..3 {
        column.clear();
        column.extend(rotated.iter().map(|p| p[axis]));
        (lo[axis], hi[axis]) = trimmed_extent(&mut column, trim_fraction);
    }
    Ok(descriptor.origin_from_extents(lo, hi))
}

/// EE translation in the camera frame: the de-rotated origin rotated
/// forward by `rotation`.
pub fn rpt_translation(
    rotated: &[Point3<f64>],
    rotation: &Quaternion,
    descriptor: &RptDescriptor,
    trim_fraction: f64,
) -> Result<Vector3<f64>> {
    Ok(rotation * rpt_local_translation(rotated, descriptor, trim_fraction)?)
}

pub fn rpt_pose(
    ee: &PointCloud,
    predictor: &dyn RotationPredictor,
    descriptor: &RptDescriptor,
    trim_fraction: f64,
    gt_ee_pose: Option<&Pose>,
    rng: &mut dyn RngCore,
) -> Result<Pose> {
    if ee.len() < MIN_RPT_POINTS {
        return Err(Error::TooFewPoints {
            got: ee.len(),
            need: MIN_RPT_POINTS,
        });
    }
    let rotation = predictor.predict(ee, gt_ee_pose, rng)?;
    let back = rotate_back(ee, &rotation);
    let t = rpt_translation(&back.points, &rotation, descriptor, trim_fraction)?;
    Ok(Pose::new(rotation, t))
}
