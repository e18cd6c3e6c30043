//! Single JSON document configuring every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::{OutlierConfig, SanityConfig};
use crate::error::{Error, Result};
use crate::icp::IcpConfig;
use crate::kpm::KpmConfig;
use crate::labeling::LabelingConfig;
use crate::rpt::RptConfig;
use crate::segmentation::SegmentationConfig;
use crate::simulator::Scenario;

/// Noise levels of the oracle rotation and keypoint predictors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub rotation_sigma_deg: f64,
    pub keypoint_sigma_m: f64,
    pub keypoint_dropout: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            rotation_sigma_deg: 5.0,
            keypoint_sigma_m: 0.005,
            keypoint_dropout: 0.1,
        }
    }
}

impl PredictorConfig {
    /// Exact oracles.
    pub fn noiseless() -> Self {
        Self {
            rotation_sigma_deg: 0.0,
            keypoint_sigma_m: 0.0,
            keypoint_dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub sanity: SanityConfig,
    pub outliers: OutlierConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationConfig {
    /// ADD thresholds (meters) of the accuracy curve.
    pub add_thresholds: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            add_thresholds: (1..=10).map(|i| i as f64 * 0.005).collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Seeds the simulator and every randomized predictor.
    pub seed: u64,
    pub scenario: Scenario,
    pub labeling: LabelingConfig,
    pub segmentation: SegmentationConfig,
    pub predictors: PredictorConfig,
    pub rpt: RptConfig,
    pub kpm: KpmConfig,
    pub icp: IcpConfig,
    pub calibration: CalibrationConfig,
    pub evaluation: EvaluationConfig,
}

/// False for NaN.
fn is_positive(v: f64) -> bool {
    v > 0.0
}

/// False for NaN.
fn is_non_negative(v: f64) -> bool {
    v >= 0.0
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.labeling.validate()?;
        self.segmentation.validate()?;
        self.icp.validate()?;
        let p = &self.predictors;
        if !(p.rotation_sigma_deg.is_finite() && p.rotation_sigma_deg >= 0.0) {
            return Err(Error::Config("predictors.rotation_sigma_deg must be non-negative".into()));
        }
        if !(p.keypoint_sigma_m.is_finite() && p.keypoint_sigma_m >= 0.0) {
            return Err(Error::Config("predictors.keypoint_sigma_m must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&p.keypoint_dropout) {
            return Err(Error::Config("predictors.keypoint_dropout must lie in [0, 1]".into()));
        }
        if !(0.0..0.5).contains(&self.rpt.extent_trim_fraction) {
            return Err(Error::Config("rpt.extent_trim_fraction must lie in [0, 0.5)".into()));
        }
        if !is_positive(self.kpm.quality_radius) {
            return Err(Error::Config("kpm.quality_radius must be positive".into()));
        }
        let o = &self.calibration.outliers;
        if !is_positive(o.modified_zscore_threshold) || !is_non_negative(o.mad_zero_epsilon) {
            return Err(Error::Config(
                "calibration.outliers needs a positive threshold and non-negative epsilon".into(),
            ));
        }
        if !is_non_negative(self.calibration.sanity.min_bbox_diagonal) {
            return Err(Error::Config("calibration.sanity.min_bbox_diagonal must be non-negative".into()));
        }
        if self.evaluation.add_thresholds.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("evaluation.add_thresholds must be positive".into()));
        }
        Ok(())
    }

    /// Scenario with the global seed applied.
    pub fn seeded_scenario(&self) -> Scenario {
        Scenario {
            seed: self.seed,
            ..self.scenario.clone()
        }
    }
}
