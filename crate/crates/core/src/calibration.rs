//! Multi-frame extrinsic calibration: per-frame base poses, frame gating,
//! robust outlier rejection and two-level averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, invert, quaternion_average, rotation_distance, PointCloud, Pose, Quaternion};

/// Consistency constant of the modified Z-score.
pub const MAD_SCALE: f64 = 0.6745;

/// Base pose in the camera implied by one EE observation.
pub fn frame_calibration(t_c_ee: &Pose, t_b_ee: &Pose) -> Pose {
    compose(t_c_ee, &invert(t_b_ee))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SanityConfig {
    pub min_ee_points: usize,
    pub min_bbox_diagonal: f64,
}

impl Default for SanityConfig {
    fn default() -> Self {
        Self {
            min_ee_points: 300,
            min_bbox_diagonal: 0.04,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum SanityFailure {
    TooFewPoints { got: usize, need: usize },
    BboxTooSmall { diagonal: f64, need: f64 },
}

impl std::fmt::Display for SanityFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SanityFailure::TooFewPoints { got, need } => write!(f, "too few EE points ({got} < {need})"),
            SanityFailure::BboxTooSmall { diagonal, need } => {
                write!(f, "EE bounding box too small ({diagonal:.4} m < {need} m)")
            }
        }
    }
}

/// Rejects frames whose EE is not visible enough to estimate a pose.
pub fn sanity_check(ee: &PointCloud, cfg: &SanityConfig) -> std::result::Result<(), SanityFailure> {
    if ee.len() < cfg.min_ee_points || ee.is_empty() {
        return Err(SanityFailure::TooFewPoints {
            got: ee.len(),
            need: cfg.min_ee_points,
        });
    }
    let diagonal = ee.bbox_diagonal();
    if diagonal < cfg.min_bbox_diagonal {
        return Err(SanityFailure::BboxTooSmall {
            diagonal,
            need: cfg.min_bbox_diagonal,
        });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisCombine {
    /// A pose is an outlier if any translation axis flags it.
    Union,
    /// A pose is an outlier only if every translation axis flags it.
    Intersection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutlierConfig {
    pub modified_zscore_threshold: f64,
    pub mad_zero_epsilon: f64,
    pub translation_axes: AxisCombine,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            modified_zscore_threshold: 3.5,
            mad_zero_epsilon: 1e-6,
            translation_axes: AxisCombine::Union,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Modified Z-score outlier flags (true = outlier).
pub fn mad_outlier_mask(values: &[f64], cfg: &OutlierConfig) -> Result<Vec<bool>> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let med = median(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&deviations);
    Ok(deviations
        .iter()
        .map(|&d| {
            if mad < cfg.mad_zero_epsilon {
                d > cfg.mad_zero_epsilon
            } else {
                MAD_SCALE * d / mad > cfg.modified_zscore_threshold
            }
        })
        .collect())
}

/// Outlier flags on the angular distances to the group's average rotation.
pub fn rotation_outlier_mask(quats: &[Quaternion], cfg: &OutlierConfig) -> Result<Vec<bool>> {
    let reference = quaternion_average(quats, None)?;
    let distances: Vec<f64> = quats.iter().map(|q| rotation_distance(q, &reference)).collect();
    mad_outlier_mask(&distances, cfg)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub pose: Pose,
    /// Per-input outlier flags.
    pub outliers: Vec<bool>,
    /// True when every input was flagged and all of them were averaged.
    pub fallback: bool,
}

impl Aggregate {
    pub fn outlier_count(&self) -> usize {
        self.outliers.iter().filter(|&&o| o).count()
    }
}

/// Robust mean pose: per-axis translation and rotation outliers removed,
/// survivors averaged (arithmetic translation, eigen-averaged rotation).
pub fn aggregate(poses: &[Pose], cfg: &OutlierConfig) -> Result<Aggregate> {
    if poses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = poses.len();
    let mut axis_masks = Vec::with_capacity(3);
    for axis in 0..3 {
        let values: Vec<f64> = poses.iter().map(|p| p.translation[axis]).collect();
        axis_masks.push(mad_outlier_mask(&values, cfg)?);
    }
    let quats: Vec<Quaternion> = poses.iter().map(|p| p.rotation).collect();
    let rot_mask = rotation_outlier_mask(&quats, cfg)?;
    let outliers: Vec<bool> = (0..n)
        .map(|i| {
            let t = match cfg.translation_axes {
                AxisCombine::Union => axis_masks.iter().any(|m| m[i]),
                AxisCombine::Intersection => axis_masks.iter().all(|m| m[i]),
            };
            t || rot_mask[i]
        })
        .collect();
    let survivors: Vec<&Pose> = poses.iter().zip(&outliers).filter(|(_, &o)| !o).map(|(p, _)| p).collect();
    let fallback = survivors.is_empty();
    let used: Vec<&Pose> = if fallback { poses.iter().collect() } else { survivors };
    let translation = used.iter().map(|p| p.translation).sum::<nalgebra::Vector3<f64>>() / used.len() as f64;
    let rotation = quaternion_average(&used.iter().map(|p| p.rotation).collect::<Vec<_>>(), None)?;
    Ok(Aggregate {
        pose: Pose::new(rotation, translation),
        outliers,
        fallback,
    })
}
