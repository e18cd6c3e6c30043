//! Per-frame estimation (segment, gate, RPT/KPM, ICP) and dataset-level
//! calibration.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{aggregate, frame_calibration, sanity_check};
use crate::config::{CalibrationConfig, PipelineConfig};
use crate::dataset::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, Pose};
use crate::icp::{icp_refine, IcpModel, IcpResult};
use crate::kpm::{kpm_pose, quality_filter, KeypointPredictor, NoisyOracleKeypoints};
use crate::rpt::{rpt_pose, NoisyOracleRotation, RotationPredictor};
use crate::seeds::{rng_for, Stream};
use crate::segmentation::{segment_end_effector, SegmentationPredictor};
use crate::simulator::EEModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rpt,
    Kpm,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Rpt, Method::Kpm];

    pub fn name(self) -> &'static str {
        match self {
            Method::Rpt => "RPT",
            Method::Kpm => "KPM",
        }
    }
}

/// One EE pose estimate for a frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub method: Method,
    pub icp: bool,
    /// EE pose in the camera frame.
    pub pose: Pose,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icp_result: Option<IcpResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub method: Method,
    pub icp: bool,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub frame_index: usize,
    pub config_id: u32,
    /// EE points left after segmentation and clustering.
    pub ee_points: usize,
    pub bbox_diagonal: f64,
    /// Why the frame was excluded, if it was.
    pub rejection: Option<String>,
    /// Keypoints that survived the quality filter.
    pub keypoints_used: usize,
    pub candidates: Vec<Candidate>,
    pub failures: Vec<CandidateFailure>,
}

impl FrameEstimate {
    pub fn passed(&self) -> bool {
        self.rejection.is_none()
    }

    pub fn candidate(&self, method: Method, icp: bool) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.method == method && c.icp == icp)
    }
}

pub struct Pipeline {
    pub config: PipelineConfig,
    pub model: EEModel,
    pub icp_model: IcpModel,
    segmenter: Box<dyn SegmentationPredictor>,
    rotation: Box<dyn RotationPredictor>,
    keypoints: Box<dyn KeypointPredictor>,
}

impl Pipeline {
    /// Pipeline using the predictors selected in `config`.
    pub fn new(config: &PipelineConfig, model: &ModelSpec) -> Result<Self> {
        let p = &config.predictors;
        Self::with_predictors(
            config,
            model,
            config.segmentation.build_predictor(),
            Box::new(NoisyOracleRotation {
                sigma: p.rotation_sigma_deg.to_radians(),
            }),
            Box::new(NoisyOracleKeypoints {
                sigma: p.keypoint_sigma_m,
                dropout: p.keypoint_dropout,
            }),
        )
    }

    pub fn with_predictors(
        config: &PipelineConfig,
        model: &ModelSpec,
        segmenter: Box<dyn SegmentationPredictor>,
        rotation: Box<dyn RotationPredictor>,
        keypoints: Box<dyn KeypointPredictor>,
    ) -> Result<Self> {
        config.validate()?;
        let model = model.build()?;
        let icp_model = IcpModel::from_ee_model(&model);
        Ok(Self {
            config: config.clone(),
            model,
            icp_model,
            segmenter,
            rotation,
            keypoints,
        })
    }

    /// Runs every per-frame stage on frame `index`. Stage failures are
    /// recorded in the estimate; only missing inputs are errors.
    pub fn estimate_frame(&self, dataset: &Dataset, index: usize) -> Result<FrameEstimate> {
        let frame = dataset
            .frames
            .get(index)
            .ok_or_else(|| Error::Config(format!("frame index {index} out of range ({} frames)", dataset.frames.len())))?;
        let seed = self.config.seed;
        let mut out = FrameEstimate {
            frame_index: index,
            config_id: frame.config_id,
            ee_points: 0,
            bbox_diagonal: 0.0,
            rejection: None,
            keypoints_used: 0,
            candidates: Vec::new(),
            failures: Vec::new(),
        };

        let mut rng = rng_for(seed, Stream::Segmentation, index as u64);
        let ee = match segment_end_effector(&frame.cloud, self.segmenter.as_ref(), &self.config.segmentation, &mut rng) {
            Ok(ee) => ee,
            Err(e @ (Error::EmptyCloud | Error::NoValidCluster { .. })) => {
                out.rejection = Some(format!("segmentation: {e}"));
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        out.ee_points = ee.len();
        out.bbox_diagonal = ee.bbox_diagonal();
        if let Err(f) = sanity_check(&ee, &self.config.calibration.sanity) {
            out.rejection = Some(format!("sanity: {f}"));
            return Ok(out);
        }

        let gt = dataset.gt_ee_pose(index);
        let trim = if dataset.is_noiseless() {
            0.0
        } else {
            self.config.rpt.extent_trim_fraction
        };
        let mut raw = Vec::new();
        let mut rng = rng_for(seed, Stream::Rotation, index as u64);
        match rpt_pose(&ee, self.rotation.as_ref(), &self.model.rpt_descriptor, trim, gt.as_ref(), &mut rng) {
            Ok(pose) => raw.push((Method::Rpt, pose)),
            Err(e @ Error::MissingGroundTruth) => return Err(e),
            Err(e) => out.failures.push(failure(Method::Rpt, false, &e)),
        }
        let mut rng = rng_for(seed, Stream::Keypoints, index as u64);
        match self.estimate_kpm(&ee, gt.as_ref(), &mut rng) {
            Ok((pose, used)) => {
                out.keypoints_used = used;
                raw.push((Method::Kpm, pose));
            }
            Err((e, used)) => {
                if matches!(e, Error::MissingGroundTruth) {
                    return Err(e);
                }
                out.keypoints_used = used;
                out.failures.push(failure(Method::Kpm, false, &e));
            }
        }

        for &(method, pose) in &raw {
            out.candidates.push(Candidate {
                method,
                icp: false,
                pose,
                icp_result: None,
            });
        }
        if self.config.icp.enabled {
            for &(method, pose) in &raw {
                match icp_refine(&self.icp_model, &ee.points, &pose, &self.config.icp) {
                    Ok(r) => out.candidates.push(Candidate {
                        method,
                        icp: true,
                        pose: r.refined_pose,
                        icp_result: Some(r),
                    }),
                    Err(e) => out.failures.push(failure(method, true, &e)),
                }
            }
        }
        Ok(out)
    }

    fn estimate_kpm(
        &self,
        ee: &PointCloud,
        gt: Option<&Pose>,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> std::result::Result<(Pose, usize), (Error, usize)> {
        let predicted = self.keypoints.predict(ee, gt, rng).map_err(|e| (e, 0))?;
        let kept = quality_filter(&predicted, ee, self.config.kpm.quality_radius);
        let n = kept.len();
        kpm_pose(&kept, &self.model.ref_keypoints).map(|p| (p, n)).map_err(|e| (e, n))
    }

    /// Estimates every frame; work runs in parallel, output is in frame
    /// order.
    pub fn estimate_all(&self, dataset: &Dataset) -> Result<Vec<FrameEstimate>> {
        (0..dataset.frames.len())
            .into_par_iter()
            .map(|i| self.estimate_frame(dataset, i))
            .collect()
    }

    pub fn calibrate(&self, dataset: &Dataset) -> Result<CalibrationResult> {
        let estimates = self.estimate_all(dataset)?;
        calibrate_from_estimates(dataset, &estimates, self.config.icp.enabled, &self.config.calibration)
    }
}

fn failure(method: Method, icp: bool, e: &Error) -> CandidateFailure {
    CandidateFailure {
        method,
        icp,
        error: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub config_id: u32,
    pub pose: Pose,
    pub frames_used: usize,
    pub samples: usize,
    pub outliers_removed: usize,
    /// Every sample was flagged, so all were averaged.
    pub fallback: bool,
    /// Flagged as an outlier among the group estimates.
    pub rejected: bool,
    pub residual_translation: f64,
    pub residual_rotation_deg: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MethodMix {
    pub rpt: usize,
    pub kpm: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRejection {
    pub frame_index: usize,
    pub config_id: u32,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Robot base pose in the camera frame.
    pub calibration: Pose,
    pub icp: bool,
    pub frames_total: usize,
    pub frames_used: usize,
    /// Frames excluded by segmentation or the sanity check.
    pub frames_rejected: usize,
    /// Frames that passed the gate but produced no estimate.
    pub frames_without_estimate: usize,
    /// Samples per method that survived group outlier rejection.
    pub method_mix: MethodMix,
    pub groups: Vec<GroupRecord>,
    pub final_fallback: bool,
    pub rejections: Vec<FrameRejection>,
}

/// Groups per-frame base poses by robot configuration, aggregates each
/// group, then aggregates the group results.
pub fn calibrate_from_estimates(
    dataset: &Dataset,
    estimates: &[FrameEstimate],
    use_icp: bool,
    cfg: &CalibrationConfig,
) -> Result<CalibrationResult> {
    let mut groups: BTreeMap<u32, Vec<(usize, Method, Pose)>> = BTreeMap::new();
    let mut rejections = Vec::new();
    let mut without = 0;
    for est in estimates {
        if let Some(reason) = &est.rejection {
            rejections.push(FrameRejection {
                frame_index: est.frame_index,
                config_id: est.config_id,
                reason: reason.clone(),
            });
            continue;
        }
        let t_b_ee = dataset.frames[est.frame_index].t_b_ee;
        let samples: Vec<_> = est
            .candidates
            .iter()
            .filter(|c| c.icp == use_icp)
            .map(|c| (est.frame_index, c.method, frame_calibration(&c.pose, &t_b_ee)))
            .collect();
        if samples.is_empty() {
            without += 1;
        }
        groups.entry(est.config_id).or_default().extend(samples);
    }
    groups.retain(|_, v| !v.is_empty());
    if groups.is_empty() {
        return Err(Error::NoUsableFrames {
            total: dataset.frames.len(),
        });
    }

    let mut records = Vec::new();
    let mut mix = MethodMix::default();
    let mut frames_used = 0;
    for (&config_id, samples) in &groups {
        let poses: Vec<Pose> = samples.iter().map(|s| s.2).collect();
        let agg = aggregate(&poses, &cfg.outliers)?;
        let mut frames: Vec<usize> = samples.iter().map(|s| s.0).collect();
        frames.dedup();
        frames_used += frames.len();
        for (s, &o) in samples.iter().zip(&agg.outliers) {
            if !o || agg.fallback {
                match s.1 {
                    Method::Rpt => mix.rpt += 1,
                    Method::Kpm => mix.kpm += 1,
                }
            }
        }
        records.push(GroupRecord {
            config_id,
            pose: agg.pose,
            frames_used: frames.len(),
            samples: samples.len(),
            outliers_removed: if agg.fallback { 0 } else { agg.outlier_count() },
            fallback: agg.fallback,
            rejected: false,
            residual_translation: 0.0,
            residual_rotation_deg: 0.0,
        });
    }
    let group_poses: Vec<Pose> = records.iter().map(|r| r.pose).collect();
    let top = aggregate(&group_poses, &cfg.outliers)?;
    for (r, &o) in records.iter_mut().zip(&top.outliers) {
        r.rejected = o && !top.fallback;
        r.residual_translation = (r.pose.translation - top.pose.translation).norm();
        r.residual_rotation_deg = crate::geometry::rotation_distance(&r.pose.rotation, &top.pose.rotation).to_degrees();
    }
    Ok(CalibrationResult {
        calibration: top.pose,
        icp: use_icp,
        frames_total: dataset.frames.len(),
        frames_used,
        frames_rejected: rejections.len(),
        frames_without_estimate: without,
        method_mix: mix,
        groups: records,
        final_fallback: top.fallback,
        rejections,
    })
}
