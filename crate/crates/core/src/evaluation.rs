//! Pose error metrics (translation, rotation, ADD) and dataset reports.

use std::fmt::Write as _;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{rotation_distance, Pose};
use crate::pipeline::{calibrate_from_estimates, FrameEstimate, Method, Pipeline};

pub fn translation_error(gt: &Pose, pred: &Pose) -> f64 {
    (gt.translation - pred.translation).norm()
}

pub fn rotation_error(gt: &Pose, pred: &Pose) -> f64 {
    rotation_distance(&gt.rotation, &pred.rotation)
}

/// Mean distance between model points placed by `gt` and by `pred`.
pub fn add_metric(model: &[Point3<f64>], gt: &Pose, pred: &Pose) -> Result<f64> {
    if model.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let total: f64 = model.iter().map(|p| (gt.apply(p) - pred.apply(p)).norm()).sum();
    Ok(total / model.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseErrorReport {
    pub translation_error: f64,
    pub rotation_error_deg: f64,
    pub add: f64,
}

impl PoseErrorReport {
    pub fn new(model: &[Point3<f64>], gt: &Pose, pred: &Pose) -> Result<Self> {
        Ok(Self {
            translation_error: translation_error(gt, pred),
            rotation_error_deg: rotation_error(gt, pred).to_degrees(),
            add: add_metric(model, gt, pred)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateError {
    pub method: Method,
    pub icp: bool,
    #[serde(flatten)]
    pub errors: PoseErrorReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame_index: usize,
    pub config_id: u32,
    pub rejection: Option<String>,
    pub estimates: Vec<EstimateError>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub icp: bool,
    pub frames: usize,
    pub translation_error: MeanStd,
    pub rotation_error_deg: MeanStd,
    pub add: MeanStd,
    /// Fraction of this row's estimates at or under each curve threshold.
    pub add_accuracy: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationError {
    pub icp: bool,
    pub translation_error: f64,
    pub rotation_error_deg: f64,
    pub frames_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub frames_total: usize,
    pub frames_passed: usize,
    pub add_thresholds: Vec<f64>,
    /// One row per method with and without ICP.
    pub summary: Vec<SummaryRow>,
    pub calibration: Vec<CalibrationError>,
    pub frames: Vec<FrameReport>,
}

impl EvaluationReport {
    pub fn row(&self, method: Method, icp: bool) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.icp == icp)
    }

    /// Aligned plain-text table of the summary and calibration errors.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "frames: {} total, {} passed the sanity check",
            self.frames_total, self.frames_passed
        );
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>16} {:>16} {:>16} {:>10}",
            "method", "frames", "e_t [cm]", "e_R [deg]", "ADD [cm]", "ADD<=2cm"
        );
        for r in &self.summary {
            let name = format!("{}{}", r.method.name(), if r.icp { "+ICP" } else { "" });
            let under_2cm = self
                .add_thresholds
                .iter()
                .position(|&t| (t - 0.02).abs() < 1e-12)
                .map(|i| format!("{:.1}%", 100.0 * r.add_accuracy[i]))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>16} {:>16} {:>16} {:>10}",
                name,
                r.frames,
                format!("{:.3} ± {:.3}", 100.0 * r.translation_error.mean, 100.0 * r.translation_error.std),
                format!("{:.3} ± {:.3}", r.rotation_error_deg.mean, r.rotation_error_deg.std),
                format!("{:.3} ± {:.3}", 100.0 * r.add.mean, 100.0 * r.add.std),
                under_2cm
            );
        }
        for c in &self.calibration {
            let _ = writeln!(
                out,
                "calibration{}: e_t = {:.4} cm, e_R = {:.4} deg ({} frames)",
                if c.icp { " (ICP)" } else { "" },
                100.0 * c.translation_error,
                c.rotation_error_deg,
                c.frames_used
            );
        }
        out
    }

    /// One CSV row per frame estimate.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame_index,config_id,method,icp,translation_error_m,rotation_error_deg,add_m\n");
        for f in &self.frames {
            for e in &f.estimates {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{:.9},{:.9},{:.9}",
                    f.frame_index,
                    f.config_id,
                    e.method.name(),
                    e.icp,
                    e.errors.translation_error,
                    e.errors.rotation_error_deg,
                    e.errors.add
                );
            }
        }
        out
    }
}

/// Errors of every estimate against ground truth, summarised per method
/// with and without ICP, plus the calibration error of both variants.
pub fn evaluate_dataset(dataset: &Dataset, pipeline: &Pipeline) -> Result<EvaluationReport> {
    let gt_calibration = dataset.gt_calibration.ok_or(Error::MissingGroundTruth)?;
    let estimates = pipeline.estimate_all(dataset)?;
    evaluate_estimates(dataset, pipeline, &estimates, &gt_calibration)
}

pub fn evaluate_estimates(
    dataset: &Dataset,
    pipeline: &Pipeline,
    estimates: &[FrameEstimate],
    gt_calibration: &Pose,
) -> Result<EvaluationReport> {
    let model = &pipeline.model.surface.points;
    let thresholds = pipeline.config.evaluation.add_thresholds.clone();
    let mut frames = Vec::with_capacity(estimates.len());
    for est in estimates {
        let gt = dataset.gt_ee_pose(est.frame_index).ok_or(Error::MissingGroundTruth)?;
        let mut errors = Vec::new();
        for c in &est.candidates {
            errors.push(EstimateError {
                method: c.method,
                icp: c.icp,
                errors: PoseErrorReport::new(model, &gt, &c.pose)?,
            });
        }
        frames.push(FrameReport {
            frame_index: est.frame_index,
            config_id: est.config_id,
            rejection: est.rejection.clone(),
            estimates: errors,
        });
    }

    let mut summary = Vec::new();
    for method in Method::ALL {
        for icp in [false, true] {
            let rows: Vec<&PoseErrorReport> = frames
                .iter()
                .flat_map(|f| f.estimates.iter())
                .filter(|e| e.method == method && e.icp == icp)
                .map(|e| &e.errors)
                .collect();
            let col = |f: fn(&PoseErrorReport) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let adds = col(|r| r.add);
            summary.push(SummaryRow {
                method,
                icp,
                frames: rows.len(),
                translation_error: MeanStd::of(&col(|r| r.translation_error)),
                rotation_error_deg: MeanStd::of(&col(|r| r.rotation_error_deg)),
                add: MeanStd::of(&adds),
                add_accuracy: thresholds
                    .iter()
                    .map(|&t| {
                        if adds.is_empty() {
                            0.0
                        } else {
                            adds.iter().filter(|&&a| a <= t).count() as f64 / adds.len() as f64
                        }
                    })
                    .collect(),
            });
        }
    }

    let mut calibration = Vec::new();
    for icp in [false, true] {
        match calibrate_from_estimates(dataset, estimates, icp, &pipeline.config.calibration) {
            Ok(r) => calibration.push(CalibrationError {
                icp,
                translation_error: translation_error(gt_calibration, &r.calibration),
                rotation_error_deg: rotation_error(gt_calibration, &r.calibration).to_degrees(),
                frames_used: r.frames_used,
            }),
            Err(Error::NoUsableFrames { .. }) => {}
            Err(e) => return Err(e),
        }
    }

    Ok(EvaluationReport {
        frames_total: dataset.frames.len(),
        frames_passed: estimates.iter().filter(|e| e.passed()).count(),
        add_thresholds: thresholds,
        summary,
        calibration,
        frames,
    })
}
