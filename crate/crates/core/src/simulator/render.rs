//! Depth-view synthesis: back-face culling, frustum clipping, hidden-point
//! removal, ray-aligned depth noise and dropout.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::EEModel;
use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud, Pose, NO_KEYPOINT};
use crate::seeds::{rng_for, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraModel {
    /// Full horizontal field of view, radians.
    pub horizontal_fov: f64,
    /// Full vertical field of view, radians.
    pub vertical_fov: f64,
    /// Depth noise standard deviation at 1 m, meters.
    pub depth_sigma_1m: f64,
    pub noise_exponent: f64,
    pub dropout: f64,
    pub near_clip: f64,
    /// Two points whose viewing rays are closer than this angle (radians)
    /// can occlude each other.
    pub occlusion_angle: f64,
    /// An occluder must be at least this much closer along its ray.
    pub occlusion_margin: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self {
            horizontal_fov: 57f64.to_radians(),
            vertical_fov: 43f64.to_radians(),
            depth_sigma_1m: 0.002,
            noise_exponent: 2.0,
            dropout: 0.0,
            near_clip: 0.3,
            occlusion_angle: 0.0025,
            occlusion_margin: 0.005,
        }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizontal_fov", self.horizontal_fov),
            ("vertical_fov", self.vertical_fov),
            ("near_clip", self.near_clip),
            ("occlusion_angle", self.occlusion_angle),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("camera.{name} must be positive, got {v}")));
            }
        }
        if !(self.depth_sigma_1m >= 0.0 && self.noise_exponent >= 0.0 && self.occlusion_margin >= 0.0) {
            return Err(Error::Config("camera noise parameters must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("camera.dropout must lie in [0, 1], got {}", self.dropout)));
        }
        if self.horizontal_fov >= std::f64::consts::PI || self.vertical_fov >= std::f64::consts::PI {
            return Err(Error::Config("field of view must be below 180 degrees".into()));
        }
        Ok(())
    }

    /// Standard deviation of the ray-aligned noise at depth `z`.
    pub fn noise_sigma(&self, z: f64) -> f64 {
        self.depth_sigma_1m * z.max(0.0).powf(self.noise_exponent)
    }

    pub fn is_noiseless(&self) -> bool {
        self.depth_sigma_1m == 0.0
    }

    pub fn in_frustum(&self, p: &Point3<f64>) -> bool {
        p.z >= self.near_clip
            && (p.x / p.z).abs() <= (0.5 * self.horizontal_fov).tan()
            && (p.y / p.z).abs() <= (0.5 * self.vertical_fov).tan()
    }
}

/// Static scene geometry in the camera frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundPrimitive {
    /// Parallelogram `origin + a·edge_u + b·edge_v`, `a, b ∈ [0, 1]`.
    Plane {
        origin: [f64; 3],
        edge_u: [f64; 3],
        edge_v: [f64; 3],
    },
    /// Axis-aligned box.
    Box { min: [f64; 3], max: [f64; 3] },
}

/// Pre-sampled background surface.
#[derive(Clone, Debug, Default)]
pub struct BackgroundScene {
    pub points: Vec<Point3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub face_ids: Vec<u32>,
}

fn sample_parallelogram(
    origin: Point3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    spacing: f64,
    normal: Vector3<f64>,
    face: u32,
    out: &mut BackgroundScene,
) {
    let nu = (u.norm() / spacing).ceil().max(1.0) as usize + 1;
    let nv = (v.norm() / spacing).ceil().max(1.0) as usize + 1;
    for i in 0..nu {
        for j in 0..nv {
            let p = origin + u * (i as f64 / (nu - 1) as f64) + v * (j as f64 / (nv - 1) as f64);
            out.points.push(p);
            out.normals.push(normal);
            out.face_ids.push(face);
        }
    }
}

impl BackgroundScene {
    pub fn sample(primitives: &[BackgroundPrimitive], spacing: f64) -> Result<Self> {
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::Config(format!("background spacing must be positive, got {spacing}")));
        }
        let mut out = BackgroundScene::default();
        let mut face = 0u32;
        for prim in primitives {
            match prim {
                BackgroundPrimitive::Plane { origin, edge_u, edge_v } => {
                    let o = Point3::from(*origin);
                    let u = Vector3::from(*edge_u);
                    let v = Vector3::from(*edge_v);
                    let mut n = u.cross(&v);
                    if n.norm() == 0.0 {
                        return Err(Error::Config("background plane edges are parallel".into()));
                    }
                    n.normalize_mut();
                    // Orient toward the camera so the plane is never culled.
                    let center = o + 0.5 * (u + v);
                    if n.dot(&center.coords) > 0.0 {
                        n = -n;
                    }
                    sample_parallelogram(o, u, v, spacing, n, face, &mut out);
                    face += 1;
                }
                BackgroundPrimitive::Box { min, max } => {
                    let lo = Point3::from(*min);
                    let hi = Point3::from(*max);
                    if (0..3).any(|a| hi[a] <= lo[a]) {
                        return Err(Error::Config("background box has non-positive extent".into()));
                    }
                    for axis in 0..3 {
                        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
                        for side in [-1.0, 1.0] {
                            let mut o = lo;
                            if side > 0.0 {
                                o[axis] = hi[axis];
                            }
                            let mut eu = Vector3::zeros();
                            eu[u] = hi[u] - lo[u];
                            let mut ev = Vector3::zeros();
                            ev[v] = hi[v] - lo[v];
                            let mut n = Vector3::zeros();
                            n[axis] = side;
                            sample_parallelogram(o, eu, ev, spacing, n, face, &mut out);
                            face += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// One synthetic depth capture.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Camera-frame points with ground-truth labels and keypoint ids.
    pub cloud: PointCloud,
    pub config_id: u32,
    pub t_b_ee: Pose,
}

impl Frame {
    pub fn ee_points(&self) -> PointCloud {
        self.cloud.select(&self.cloud.indices_with_label(Label::EndEffector))
    }
}

struct Candidate {
    point: Point3<f64>,
    face: u32,
    label: Label,
    keypoint: i32,
}

/// Removes points whose viewing ray passes within `occlusion_angle` of a
/// point on another face that is at least `occlusion_margin` closer.
/// Points on the same planar face never occlude each other.
fn hidden_point_removal(cands: &[Candidate], angle: f64, margin: f64) -> Vec<bool> {
    let dirs: Vec<Vector3<f64>> = cands.iter().map(|c| c.point.coords.normalize()).collect();
    let ranges: Vec<f64> = cands.iter().map(|c| c.point.coords.norm()).collect();
    let cell = |d: &Vector3<f64>| -> (i64, i64) {
        (
            (d.x.atan2(d.z) / angle).floor() as i64,
            (d.y.atan2(d.z) / angle).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, d) in dirs.iter().enumerate() {
        grid.entry(cell(d)).or_default().push(i);
    }
    let cos_limit = angle.cos();
    (0..cands.len())
        .map(|i| {
            let (cx, cy) = cell(&dirs[i]);
            for gx in cx - 1..=cx + 1 {
                for gy in cy - 1..=cy + 1 {
                    let Some(bucket) = grid.get(&(gx, gy)) else { continue };
                    for &j in bucket {
                        if cands[j].face != cands[i].face
                            && ranges[j] < ranges[i] - margin
                            && dirs[i].dot(&dirs[j]) > cos_limit
                        {
                            return false;
                        }
                    }
                }
            }
            true
        })
        .collect()
}

/// Displaces each point along its viewing ray by `N(0, σ(z))`.
pub fn apply_ray_noise<R: Rng>(points: &mut [Point3<f64>], camera: &CameraModel, rng: &mut R) {
    if camera.is_noiseless() {
        return;
    }
    for p in points.iter_mut() {
        let sigma = camera.noise_sigma(p.z);
        if sigma <= 0.0 {
            continue;
        }
        let n = Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
        let dir = p.coords.normalize();
        *p += dir * n;
    }
}

/// Renders the end effector at `ee_pose_in_camera` in front of `background`.
///
/// Output order: surviving end-effector samples in model order, then
/// background samples in scene order.
pub fn render_frame(
    model: &EEModel,
    ee_pose_in_camera: &Pose,
    camera: &CameraModel,
    background: &BackgroundScene,
    seed: u64,
) -> Result<PointCloud> {
    let mut cands = Vec::with_capacity(model.len() + background.points.len());
    let mut any_ee_in_view = false;
    for i in 0..model.len() {
        let p = ee_pose_in_camera.apply(&model.surface.points[i]);
        if !camera.in_frustum(&p) {
            continue;
        }
        any_ee_in_view = true;
        let n = ee_pose_in_camera.rotation * model.normals[i];
        if n.dot(&p.coords) >= 0.0 {
            continue;
        }
        cands.push(Candidate {
            point: p,
            face: model.face_ids[i],
            label: Label::EndEffector,
            keypoint: model.surface.keypoint_id(i),
        });
    }
    if !any_ee_in_view {
        return Err(Error::EeOutsideFrustum);
    }
    let face_offset = model.face_count;
    for i in 0..background.points.len() {
        let p = background.points[i];
        if !camera.in_frustum(&p) || background.normals[i].dot(&p.coords) >= 0.0 {
            continue;
        }
        cands.push(Candidate {
            point: p,
            face: face_offset + background.face_ids[i],
            label: Label::Background,
            keypoint: NO_KEYPOINT,
        });
    }

    let visible = hidden_point_removal(&cands, camera.occlusion_angle, camera.occlusion_margin);
    let mut rng = rng_for(seed, Stream::Render, 0);
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut keypoints = Vec::new();
    for (c, keep) in cands.iter().zip(visible) {
        if !keep {
            continue;
        }
        points.push(c.point);
        labels.push(c.label);
        keypoints.push(c.keypoint);
    }
    apply_ray_noise(&mut points, camera, &mut rng);
    if camera.dropout > 0.0 {
        let keep: Vec<bool> = (0..points.len()).map(|_| rng.random::<f64>() >= camera.dropout).collect();
        let mut it = keep.iter();
        points.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        labels.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        keypoints.retain(|_| *it.next().unwrap());
    }
    Ok(PointCloud::new(points)
        .with_labels(labels)
        .with_keypoint_ids(keypoints))
}

/// Background-only capture, as used for background subtraction.
pub fn render_background(camera: &CameraModel, background: &BackgroundScene, seed: u64) -> PointCloud {
    let cands: Vec<Candidate> = (0..background.points.len())
        .filter(|&i| {
            let p = background.points[i];
            camera.in_frustum(&p) && background.normals[i].dot(&p.coords) < 0.0
        })
        .map(|i| Candidate {
            point: background.points[i],
            face: background.face_ids[i],
            label: Label::Background,
            keypoint: NO_KEYPOINT,
        })
        .collect();
    let visible = hidden_point_removal(&cands, camera.occlusion_angle, camera.occlusion_margin);
    let mut points: Vec<Point3<f64>> = cands
        .iter()
        .zip(visible)
        .filter(|(_, v)| *v)
        .map(|(c, _)| c.point)
        .collect();
    let mut rng = rng_for(seed, Stream::Background, 0);
    apply_ray_noise(&mut points, camera, &mut rng);
    let n = points.len();
    PointCloud::new(points)
        .with_labels(vec![Label::Background; n])
        .with_keypoint_ids(vec![NO_KEYPOINT; n])
}
