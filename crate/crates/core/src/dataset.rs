//! On-disk dataset layout: `manifest.json` plus one ASCII PLY per frame.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, Pose};
use crate::ply;
use crate::simulator::{build_ee_model, EEModel, Frame, GripperDims, Scenario, DEFAULT_SAMPLING_DENSITY};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_TAG: &str = "eecal-dataset/1";

/// Enough to rebuild the reference gripper model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub gripper: GripperDims,
    pub sampling_density: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            gripper: GripperDims::default(),
            sampling_density: DEFAULT_SAMPLING_DENSITY,
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<EEModel> {
        build_ee_model(&self.gripper, self.sampling_density)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameRecord {
    pub file: String,
    pub config_id: u32,
    pub t_b_ee: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    #[serde(default)]
    pub scenario: Option<Scenario>,
    #[serde(default)]
    pub gt_calibration: Option<Pose>,
    pub model: ModelSpec,
    pub frames: Vec<FrameRecord>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Generating scenario, when the dataset is synthetic.
    pub scenario: Option<Scenario>,
    pub gt_calibration: Option<Pose>,
    pub model: ModelSpec,
    pub frames: Vec<Frame>,
    pub warnings: Vec<String>,
}

impl Dataset {
    /// True only when the generating camera is known to add no depth noise.
    pub fn is_noiseless(&self) -> bool {
        self.scenario
            .as_ref()
            .is_some_and(|s| s.camera.is_noiseless())
    }

    /// Ground-truth end-effector pose in the camera for frame `index`.
    pub fn gt_ee_pose(&self, index: usize) -> Option<Pose> {
        self.gt_calibration
            .map(|gt| compose(&gt, &self.frames[index].t_b_ee))
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: FORMAT_TAG.to_string(),
            scenario: self.scenario.clone(),
            gt_calibration: self.gt_calibration,
            model: self.model.clone(),
            frames: self
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| FrameRecord {
                    file: frame_file_name(i),
                    config_id: f.config_id,
                    t_b_ee: f.t_b_ee,
                })
                .collect(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = self.manifest();
        for (frame, record) in self.frames.iter().zip(&manifest.frames) {
            ply::write(&dir.join(&record.file), &frame.cloud)?;
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.clone(),
            source: e,
        })?;
        if manifest.format != FORMAT_TAG {
            return Err(Error::Config(format!(
                "{}: unsupported dataset format '{}'",
                path.display(),
                manifest.format
            )));
        }
        let frames = manifest
            .frames
            .iter()
            .map(|r| {
                Ok(Frame {
                    cloud: ply::read(&dir.join(&r.file))?,
                    config_id: r.config_id,
                    t_b_ee: r.t_b_ee,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            scenario: manifest.scenario,
            gt_calibration: manifest.gt_calibration,
            model: manifest.model,
            frames,
            warnings: manifest.warnings,
        })
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.ply")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::generate_dataset;

    #[test]
    fn save_and_load_roundtrip() {
        let mut scenario = Scenario {
            frames_per_config: 1,
            ..Default::default()
        };
        scenario.robot_configs.truncate(2);
        let d = generate_dataset(&scenario).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.frames.len(), 2);
        assert_eq!(back.gt_calibration, d.gt_calibration);
        assert_eq!(back.scenario, d.scenario);
        assert_eq!(back.frames[1].cloud.labels, d.frames[1].cloud.labels);
        assert_eq!(back.frames[1].cloud.keypoint_ids, d.frames[1].cloud.keypoint_ids);
        for (a, b) in back.frames[0].cloud.points.iter().zip(&d.frames[0].cloud.points) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn missing_manifest_is_an_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Dataset::load(dir.path()), Err(Error::Io { .. })));
    }
}
