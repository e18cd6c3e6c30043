//! Synthetic stand-in for the physical camera + robot setup.

mod model;
mod render;

pub use model::{build_ee_model, Aabb, AxisRule, EEModel, EePart, GripperDims, RptDescriptor, DEFAULT_SAMPLING_DENSITY};
pub use render::{
    apply_ray_noise, render_background, render_frame, BackgroundPrimitive, BackgroundScene, CameraModel, Frame,
};

use std::collections::BTreeSet;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, ModelSpec};
use crate::error::{Error, Result};
use crate::geometry::{compose, Pose, Quaternion};
use crate::seeds::{derive_seed, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub config_id: u32,
    /// End-effector pose in the robot base frame (forward kinematics).
    pub t_b_ee: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub camera: CameraModel,
    pub robot_configs: Vec<RobotConfig>,
    pub frames_per_config: usize,
    /// Robot base pose in the camera frame.
    pub gt_calibration: Pose,
    pub background: Vec<BackgroundPrimitive>,
    pub background_spacing: f64,
    pub gripper: GripperDims,
    pub sampling_density: f64,
    /// Gripper parts left out of every rendered frame.
    pub hidden_parts: Vec<EePart>,
    pub seed: u64,
}

/// Base pose used by the default layout: the base sits below and in front
/// of the camera, its x axis pointing back toward the camera.
pub fn default_gt_calibration() -> Pose {
    let facing = Rotation3::from_matrix_unchecked(Matrix3::new(
        0.0, 1.0, 0.0, //
        0.0, 0.0, -1.0, //
        -1.0, 0.0, 0.0,
    ));
    let tilt = Rotation3::from_euler_angles(8f64.to_radians(), -12f64.to_radians(), 4f64.to_radians());
    Pose::new(
        Quaternion::from_rotation_matrix(&(tilt * facing)),
        Vector3::new(0.12, 0.38, 1.55),
    )
}

/// End-effector poses in the camera frame for the default layout; each
/// keeps the camera-nominal face within ~30° of the optical axis.
fn default_ee_poses_in_camera() -> Vec<Pose> {
    let spec: [([f64; 3], [f64; 3]); 6] = [
        ([-0.20, -0.10, 0.95], [10.0, 15.0, -10.0]),
        ([0.15, -0.12, 1.05], [-30.0, -10.0, 20.0]),
        ([0.00, 0.05, 1.20], [75.0, 20.0, -10.0]),
        ([-0.22, 0.10, 1.30], [120.0, -20.0, -15.0]),
        ([0.20, 0.08, 0.85], [-100.0, 5.0, 25.0]),
        ([0.05, -0.05, 1.40], [180.0, -15.0, -20.0]),
    ];
    spec.iter()
        .map(|(t, [spin, tx, ty])| {
            let r = Quaternion::from_axis_angle(&Vector3::z_axis(), spin.to_radians())
                * Quaternion::from_axis_angle(&Vector3::x_axis(), tx.to_radians())
                * Quaternion::from_axis_angle(&Vector3::y_axis(), ty.to_radians());
            Pose::new(r, Vector3::from(*t))
        })
        .collect()
}

impl Default for Scenario {
    fn default() -> Self {
        let gt = default_gt_calibration();
        let base_from_camera = gt.inverse();
        let robot_configs = default_ee_poses_in_camera()
            .iter()
            .enumerate()
            .map(|(i, t_c_ee)| RobotConfig {
                config_id: i as u32,
                t_b_ee: compose(&base_from_camera, t_c_ee),
            })
            .collect();
        Self {
            camera: CameraModel::default(),
            robot_configs,
            frames_per_config: 10,
            gt_calibration: gt,
            background: vec![
                // back wall
                BackgroundPrimitive::Plane {
                    origin: [-1.3, -0.95, 2.3],
                    edge_u: [2.6, 0.0, 0.0],
                    edge_v: [0.0, 1.9, 0.0],
                },
                // table top below the workspace
                BackgroundPrimitive::Plane {
                    origin: [-1.0, 0.5, 0.6],
                    edge_u: [2.0, 0.0, 0.0],
                    edge_v: [0.0, 0.0, 1.7],
                },
            ],
            background_spacing: 0.03,
            gripper: GripperDims::default(),
            sampling_density: DEFAULT_SAMPLING_DENSITY,
            hidden_parts: Vec::new(),
            seed: 0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        if self.frames_per_config == 0 {
            return Err(Error::Config("frames_per_config must be at least 1".into()));
        }
        let mut ids = BTreeSet::new();
        for c in &self.robot_configs {
            if !ids.insert(c.config_id) {
                return Err(Error::Config(format!("duplicate config_id {}", c.config_id)));
            }
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        self.robot_configs.len() * self.frames_per_config
    }
}

/// Renders `frames_per_config` captures per robot configuration.
///
/// Per-frame seeds derive from `(seed, frame index)`, so frames may render
/// in any order and the result stays identical.
pub fn generate_dataset(scenario: &Scenario) -> Result<Dataset> {
    scenario.validate()?;
    let model = build_ee_model(&scenario.gripper, scenario.sampling_density)?;
    let visible = model.without_parts(&scenario.hidden_parts);
    let background = BackgroundScene::sample(&scenario.background, scenario.background_spacing)?;

    let jobs: Vec<(usize, &RobotConfig)> = scenario
        .robot_configs
        .iter()
        .flat_map(|c| (0..scenario.frames_per_config).map(move |k| (k, c)))
        .collect();
    let rendered: Vec<Result<Frame>> = jobs
        .par_iter()
        .enumerate()
        .map(|(index, (_, cfg))| {
            let ee_pose = compose(&scenario.gt_calibration, &cfg.t_b_ee);
            let seed = derive_seed(scenario.seed, Stream::Render, index as u64);
            let cloud = render_frame(&visible, &ee_pose, &scenario.camera, &background, seed)?;
            Ok(Frame {
                cloud,
                config_id: cfg.config_id,
                t_b_ee: cfg.t_b_ee,
            })
        })
        .collect();

    let mut frames = Vec::with_capacity(rendered.len());
    let mut warnings = Vec::new();
    let mut skipped = BTreeSet::new();
    for ((_, cfg), r) in jobs.iter().zip(rendered) {
        match r {
            Ok(f) => frames.push(f),
            Err(Error::EeOutsideFrustum) => {
                if skipped.insert(cfg.config_id) {
                    warnings.push(format!(
                        "config {} skipped: end effector never enters the field of view",
                        cfg.config_id
                    ));
                }
            }
            Err(e) => return Err(e),
        }
    }

    Ok(Dataset {
        scenario: Some(scenario.clone()),
        gt_calibration: Some(scenario.gt_calibration),
        model: ModelSpec {
            gripper: scenario.gripper.clone(),
            sampling_density: scenario.sampling_density,
        },
        frames,
        warnings,
    })
}
