//! Point-to-point ICP refinement of an EE pose against the gripper model.
//!
//! Correspondences run from each observed (target) point to its nearest
//! model point. The observed cloud is a partial view, so pairing the other
//! way round would match hidden model faces to visible points and pull an
//! exact initial pose away from the truth.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{kabsch_fit, Pose};
use crate::pipeline::Method;
use crate::simulator::EEModel;
use crate::spatial::{voxel_downsample, KdTree};

pub const MIN_ICP_POINTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IcpConfig {
    pub enabled: bool,
    pub max_correspondence_distance: f64,
    pub max_iterations: usize,
    pub relative_rmse_epsilon: f64,
    pub relative_fitness_epsilon: f64,
    /// Voxel size used to thin the observed cloud; 0 keeps every point.
    pub target_voxel_size: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            max_correspondence_distance: 0.02,
            max_iterations: 50,
            relative_rmse_epsilon: 1e-6,
            relative_fitness_epsilon: 1e-6,
            target_voxel_size: 0.005,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_correspondence_distance", self.max_correspondence_distance),
            ("relative_rmse_epsilon", self.relative_rmse_epsilon),
            ("relative_fitness_epsilon", self.relative_fitness_epsilon),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("icp.{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("icp.max_iterations must be at least 1".into()));
        }
        if !(self.target_voxel_size.is_finite() && self.target_voxel_size >= 0.0) {
            return Err(Error::Config(format!(
                "icp.target_voxel_size must be non-negative, got {}",
                self.target_voxel_size
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIterations,
    /// The next update would have raised the inlier RMSE; it was rejected.
    ObjectiveIncrease,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub refined_pose: Pose,
    /// Update applied on the left of the initial pose.
    pub correction: Pose,
    /// Fraction of observed points with a model point within range.
    pub fitness: f64,
    pub inlier_rmse: f64,
    pub iterations_used: usize,
    pub converged: bool,
    pub termination: Termination,
    /// Inlier RMSE at the initial pose and after every accepted update.
    pub rmse_history: Vec<f64>,
}

/// Model surface with its search index, built once and shared.
pub struct IcpModel {
    pub points: Vec<Point3<f64>>,
    normals: Option<Vec<Vector3<f64>>>,
    /// Largest tangential step allowed when projecting onto a sample's plane.
    patch_radius: f64,
    tree: KdTree,
}

impl IcpModel {
    /// Bare point model; correspondences are the nearest samples.
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        let tree = KdTree::new(&points);
        Self {
            points,
            normals: None,
            patch_radius: 0.0,
            tree,
        }
    }

    /// Sampled surface with unit normals; correspondences are the closest
    /// points on the local tangent patch of the nearest sample, so the fit is
    /// not pinned to the sampling lattice.
    pub fn with_normals(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>, spacing: f64) -> Result<Self> {
        if normals.len() != points.len() {
            return Err(Error::DegenerateGeometry(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::DegenerateGeometry(format!("sample spacing must be positive, got {spacing}")));
        }
        let tree = KdTree::new(&points);
        Ok(Self {
            points,
            normals: Some(normals),
            patch_radius: spacing,
            tree,
        })
    }

    /// Normal-aware model of a simulated gripper.
    pub fn from_ee_model(model: &EEModel) -> Self {
        Self::with_normals(model.surface.points.clone(), model.normals.clone(), model.density.sqrt().recip())
            .expect("gripper model carries one normal per sample")
    }

    /// Closest model point to `q` (model frame) within `max_distance`.
    fn closest(&self, q: &Point3<f64>, max_distance: f64) -> Option<Point3<f64>> {
        let (i, _) = self.tree.nearest_within(q, max_distance)?;
        let m = self.points[i];
        let Some(normals) = &self.normals else {
            return Some(m);
        };
        let n = normals[i];
        let d = q - m;
        let mut tangent = d - n * n.dot(&d);
        let len = tangent.norm();
        if len > self.patch_radius {
            tangent *= self.patch_radius / len;
        }
        Some(m + tangent)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

struct Matching {
    model: Vec<Point3<f64>>,
    target: Vec<Point3<f64>>,
    rmse: f64,
    fitness: f64,
}

fn match_points(model: &IcpModel, target: &[Point3<f64>], pose: &Pose, max_distance: f64) -> Matching {
    let to_model = pose.inverse();
    let mut m = Vec::new();
    let mut t = Vec::new();
    let mut sq = 0.0;
    for y in target {
        let q = to_model.apply(y);
        if let Some(c) = model.closest(&q, max_distance) {
            sq += (q - c).norm_squared();
            m.push(c);
            t.push(*y);
        }
    }
    let n = m.len();
    Matching {
        rmse: if n > 0 { (sq / n as f64).sqrt() } else { 0.0 },
        fitness: n as f64 / target.len() as f64,
        model: m,
        target: t,
    }
}

fn settled(prev: f64, next: f64, eps: f64) -> bool {
    (next - prev).abs() <= eps * prev.abs().max(1e-9)
}

/// Refines `initial` (EE pose in the camera) so the model surface fits the
/// observed EE points.
pub fn icp_refine(model: &IcpModel, target: &[Point3<f64>], initial: &Pose, cfg: &IcpConfig) -> Result<IcpResult> {
    if model.len() < MIN_ICP_POINTS {
        return Err(Error::TooFewPoints {
            got: model.len(),
            need: MIN_ICP_POINTS,
        });
    }
    if !initial.is_finite() {
        return Err(Error::DegenerateGeometry("initial pose is not finite".into()));
    }
    let thinned: Vec<Point3<f64>>;
    let target = if cfg.target_voxel_size > 0.0 {
        thinned = voxel_downsample(target, cfg.target_voxel_size)
            .into_iter()
            .map(|i| target[i])
            .collect();
        &thinned[..]
    } else {
        target
    };
    if target.len() < MIN_ICP_POINTS {
        return Err(Error::TooFewPoints {
            got: target.len(),
            need: MIN_ICP_POINTS,
        });
    }

    let max_d = cfg.max_correspondence_distance;
    let mut pose = *initial;
    let mut current = match_points(model, target, &pose, max_d);
    if current.model.is_empty() {
        return Err(Error::NoCorrespondences { max_distance: max_d });
    }
    let mut history = vec![current.rmse];
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        let candidate_pose = if current.model.len() >= 3 {
            kabsch_fit(&current.model, &current.target)?
        } else {
            return Err(Error::DegenerateGeometry(format!(
                "only {} correspondences",
                current.model.len()
            )));
        };
        let next = match_points(model, target, &candidate_pose, max_d);
        let still = settled(current.rmse, next.rmse, cfg.relative_rmse_epsilon)
            && settled(current.fitness, next.fitness, cfg.relative_fitness_epsilon);
        if next.model.is_empty() || next.rmse > current.rmse {
            termination = if still {
                Termination::Converged
            } else {
                Termination::ObjectiveIncrease
            };
            break;
        }
        pose = candidate_pose;
        current = next;
        history.push(current.rmse);
        iterations += 1;
        if still {
            termination = Termination::Converged;
            break;
        }
    }

    Ok(IcpResult {
        refined_pose: pose,
        correction: pose.compose(&initial.inverse()),
        fitness: current.fitness,
        inlier_rmse: current.rmse,
        iterations_used: iterations,
        converged: termination == Termination::Converged,
        termination,
        rmse_history: history,
    })
}

#[derive(Debug)]
pub struct Refinements {
    pub results: Vec<(Method, IcpResult)>,
    pub failures: Vec<(Method, Error)>,
}

/// Runs ICP from every candidate initial pose; failures are kept, not
/// propagated.
pub fn refine_estimates(
    model: &IcpModel,
    target: &[Point3<f64>],
    candidates: &[(Method, Pose)],
    cfg: &IcpConfig,
) -> Refinements {
    let mut out = Refinements {
        results: Vec::new(),
        failures: Vec::new(),
    };
    for (method, pose) in candidates {
        match icp_refine(model, target, pose, cfg) {
            Ok(r) => out.results.push((*method, r)),
            Err(e) => out.failures.push((*method, e)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_distance, Label, Quaternion};
    use crate::simulator::{build_ee_model, generate_dataset, CameraModel, Scenario};
    use nalgebra::Vector3;

    struct Fixture {
        model: IcpModel,
        views: Vec<(Vec<Point3<f64>>, Pose)>,
    }

    fn fixture(sigma: f64) -> Fixture {
        let mut s = Scenario {
            camera: CameraModel {
                depth_sigma_1m: sigma,
                ..Default::default()
            },
            frames_per_config: 1,
            ..Default::default()
        };
        s.robot_configs.truncate(3);
        let d = generate_dataset(&s).unwrap();
        let m = build_ee_model(&s.gripper, s.sampling_density).unwrap();
        let views = (0..d.frames.len())
            .map(|i| {
                let c = &d.frames[i].cloud;
                let ee: Vec<Point3<f64>> = c.indices_with_label(Label::EndEffector).iter().map(|&j| c.points[j]).collect();
                (ee, d.gt_ee_pose(i).unwrap())
            })
            .collect();
        Fixture {
            model: IcpModel::from_ee_model(&m),
            views,
        }
    }

    fn assert_monotone(r: &IcpResult) {
        assert!(r.rmse_history.windows(2).all(|w| w[1] <= w[0]), "{:?}", r.rmse_history);
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let f = fixture(0.0);
        for (target, gt) in &f.views {
            let r = icp_refine(&f.model, target, gt, &IcpConfig::default()).unwrap();
            assert!(r.converged);
            assert!(r.iterations_used <= 2);
            assert!((r.refined_pose.translation - gt.translation).norm() < 1e-9);
            assert!(rotation_distance(&r.refined_pose.rotation, &gt.rotation) < 1e-9);
            assert!(r.inlier_rmse < 1e-9);
            assert!((r.fitness - 1.0).abs() < 1e-12);
            assert_monotone(&r);
        }
    }

    #[test]
    fn small_offsets_are_corrected() {
        let f = fixture(0.0);
        for (k, (target, gt)) in f.views.iter().enumerate() {
            let axis = nalgebra::Unit::new_normalize(Vector3::new(1.0, k as f64 - 1.0, 0.5));
            let delta = Pose::new(
                Quaternion::from_axis_angle(&axis, 3f64.to_radians()),
                Vector3::new(0.006, -0.005, 0.0055),
            );
            let initial = gt.compose(&delta);
            let cfg = IcpConfig {
                max_iterations: 250,
                ..Default::default()
            };
            let r = icp_refine(&f.model, target, &initial, &cfg).unwrap();
            assert!((r.refined_pose.translation - gt.translation).norm() < 1e-4);
            assert!(rotation_distance(&r.refined_pose.rotation, &gt.rotation).to_degrees() < 0.01);
            assert_monotone(&r);
        }
    }

    #[test]
    fn noisy_refinement_is_monotone_and_composes() {
        let f = fixture(0.002);
        for (target, gt) in &f.views {
            let initial = Pose::from_translation(Vector3::new(0.004, 0.0, -0.003)).compose(gt);
            let r = icp_refine(&f.model, target, &initial, &IcpConfig::default()).unwrap();
            assert_monotone(&r);
            assert!((0.0..=1.0).contains(&r.fitness));
            let recomposed = r.correction.compose(&initial);
            for p in f.model.points.iter().step_by(97) {
                assert!((recomposed.apply(p) - r.refined_pose.apply(p)).norm() < 1e-9);
            }
            assert!((r.refined_pose.translation - gt.translation).norm() < 0.003);
        }
    }

    #[test]
    fn distant_initialisation_has_no_correspondences() {
        let f = fixture(0.0);
        let (target, gt) = &f.views[0];
        let initial = Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)).compose(gt);
        assert!(matches!(
            icp_refine(&f.model, target, &initial, &IcpConfig::default()),
            Err(Error::NoCorrespondences { .. })
        ));
    }

    #[test]
    fn refine_estimates_keeps_failures() {
        let f = fixture(0.0);
        let (target, gt) = &f.views[0];
        let far = Pose::from_translation(Vector3::new(0.5, 0.0, 0.0)).compose(gt);
        let both = refine_estimates(&f.model, target, &[(Method::Rpt, *gt), (Method::Kpm, *gt)], &IcpConfig::default());
        assert_eq!(both.results.len(), 2);
        let one = refine_estimates(&f.model, target, &[(Method::Rpt, *gt), (Method::Kpm, far)], &IcpConfig::default());
        assert_eq!(one.results.len(), 1);
        assert_eq!(one.results[0].0, Method::Rpt);
        assert_eq!(one.failures.len(), 1);
        let none = refine_estimates(&f.model, target, &[(Method::Kpm, far)], &IcpConfig::default());
        assert!(none.results.is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(IcpConfig::default().validate().is_ok());
        let bad = IcpConfig {
            max_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
