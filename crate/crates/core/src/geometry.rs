//! Rigid-body primitives shared by every stage of the pipeline.
//!
//! Quaternions follow the Hamilton convention and are stored scalar-first
//! (`w, x, y, z`) wherever they leave the process. A [`Pose`] maps points
//! from a child frame into its parent frame: `p_parent = R * p_child + t`.

use nalgebra::{Matrix3, Matrix4, Point3, Quaternion as RawQuaternion, Unit, UnitQuaternion, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Quaternion = UnitQuaternion<f64>;

/// Rigid transform stored as a unit quaternion plus a translation in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseJson", into = "PoseJson")]
pub struct Pose {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseJson {
    q: [f64; 4],
    t: [f64; 3],
}

impl TryFrom<PoseJson> for Pose {
    type Error = String;

    fn try_from(json: PoseJson) -> std::result::Result<Self, Self::Error> {
        let [w, x, y, z] = json.q;
        let raw = RawQuaternion::new(w, x, y, z);
        let norm = raw.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(format!("quaternion {:?} cannot be normalized", json.q));
        }
        if json.t.iter().any(|v| !v.is_finite()) {
            return Err(format!("translation {:?} is not finite", json.t));
        }
        // Already-unit input is kept bit-exact so files round-trip.
        let rotation = if (norm - 1.0).abs() <= 4.0 * f64::EPSILON {
            Unit::new_unchecked(raw)
        } else {
            Unit::new_normalize(raw)
        };
        Ok(Pose::new(rotation, Vector3::new(json.t[0], json.t[1], json.t[2])))
    }
}

impl From<Pose> for PoseJson {
    fn from(pose: Pose) -> Self {
        let q = pose.rotation.quaternion();
        PoseJson {
            q: [q.w, q.i, q.j, q.k],
            t: [pose.translation.x, pose.translation.y, pose.translation.z],
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::identity(), Vector3::zeros())
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self::new(Quaternion::identity(), translation)
    }

    pub fn from_rotation(rotation: Quaternion) -> Self {
        Self::new(rotation, Vector3::zeros())
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose::new(inv, -(inv * self.translation))
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn is_finite(&self) -> bool {
        let q = self.rotation.quaternion();
        q.coords.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Semantic class of a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Label {
    Background = 0,
    Arm = 1,
    EndEffector = 2,
}

impl Label {
    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Background),
            1 => Some(Label::Arm),
            2 => Some(Label::EndEffector),
            _ => None,
        }
    }

    pub const ALL: [Label; 3] = [Label::Background, Label::Arm, Label::EndEffector];
}

/// Keypoint id stored for points that are not keypoints.
pub const NO_KEYPOINT: i32 = -1;

/// Ordered 3-D points with optional per-point semantic labels and keypoint ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3<f64>>,
    pub labels: Option<Vec<Label>>,
    pub keypoint_ids: Option<Vec<i32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Self {
        Self {
            points,
            labels: None,
            keypoint_ids: None,
        }
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Self {
        assert_eq!(labels.len(), self.points.len(), "label count mismatch");
        self.labels = Some(labels);
        self
    }

    pub fn with_keypoint_ids(mut self, ids: Vec<i32>) -> Self {
        assert_eq!(ids.len(), self.points.len(), "keypoint id count mismatch");
        self.keypoint_ids = Some(ids);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn label(&self, i: usize) -> Option<Label> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn keypoint_id(&self, i: usize) -> i32 {
        self.keypoint_ids.as_ref().map_or(NO_KEYPOINT, |k| k[i])
    }

    /// Subset of the cloud at `indices`, carrying every per-point attribute.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            keypoint_ids: self
                .keypoint_ids
                .as_ref()
                .map(|k| indices.iter().map(|&i| k[i]).collect()),
        }
    }

    /// Indices of points carrying `label`.
    pub fn indices_with_label(&self, label: Label) -> Vec<usize> {
        match &self.labels {
            Some(labels) => labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == label)
                .map(|(i, _)| i)
                .collect(),
            None => Vec::new(),
        }
    }

    /// Keypoint ids present in the cloud with the index of the carrying point.
    pub fn keypoints(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = match &self.keypoint_ids {
            Some(ids) => ids
                .iter()
                .enumerate()
                .filter(|(_, id)| **id >= 0)
                .map(|(i, id)| (*id as usize, i))
                .collect(),
            None => Vec::new(),
        };
        out.sort_unstable();
        out
    }

    pub fn centroid(&self) -> Option<Point3<f64>> {
        centroid(&self.points)
    }

    /// Axis-aligned bounds as `(min, max)`.
    pub fn bounds(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(lo, hi), p| {
            (lo.inf(p), hi.sup(p))
        }))
    }

    pub fn bbox_diagonal(&self) -> f64 {
        self.bounds().map_or(0.0, |(lo, hi)| (hi - lo).norm())
    }
}

pub fn transform_points(pose: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| pose.apply(p)).collect(),
        labels: cloud.labels.clone(),
        keypoint_ids: cloud.keypoint_ids.clone(),
    }
}

pub fn centroid(points: &[Point3<f64>]) -> Option<Point3<f64>> {
    if points.is_empty() {
        return None;
    }
    let sum = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords);
    Some(Point3::from(sum / points.len() as f64))
}

/// Smallest rotation angle between two orientations, in `[0, π]`.
///
/// Uses the half-angle `atan2` form so tiny angles keep full precision and
/// `q` / `-q` compare equal.
pub fn rotation_distance(a: &Quaternion, b: &Quaternion) -> f64 {
    let d = a.inverse() * b;
    let q = d.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Least-squares rigid transform mapping `source[i]` onto `target[i]`
/// (Arun/Kabsch via SVD of the cross-covariance, with the reflection fix).
pub fn kabsch_fit(source: &[Point3<f64>], target: &[Point3<f64>]) -> Result<Pose> {
    if source.len() != target.len() {
        return Err(Error::DegenerateGeometry(format!(
            "point set sizes differ: {} vs {}",
            source.len(),
            target.len()
        )));
    }
    if source.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 point pairs, got {}",
            source.len()
        )));
    }
    let cs = centroid(source).expect("non-empty");
    let ct = centroid(target).expect("non-empty");

    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateGeometry("SVD did not converge".into())),
    };
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let (s_max, s_mid) = (sv[order[0]], sv[order[1]]);
    if s_max.is_nan() || s_max <= 0.0 || s_mid <= 1e-10 * s_max {
        return Err(Error::DegenerateGeometry(
            "cross-covariance has rank < 2 (coincident or collinear points)".into(),
        ));
    }

    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(order[2], order[2])] = -1.0;
    }
    let r = v * d * u.transpose();
    let rotation = Quaternion::from_matrix(&r);
    let translation = ct.coords - rotation * cs.coords;
    Ok(Pose::new(rotation, translation))
}

/// Eigenvector average of unit quaternions (Markley et al.).
///
/// The result is the dominant eigenvector of `Σ wᵢ qᵢ qᵢᵀ`, which is
/// insensitive to the sign of every input. The returned representative has
/// a non-negative scalar part.
pub fn quaternion_average(qs: &[Quaternion], weights: Option<&[f64]>) -> Result<Quaternion> {
    if qs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if let Some(w) = weights {
        if w.len() != qs.len() {
            return Err(Error::Config(format!(
                "{} weights for {} quaternions",
                w.len(),
                qs.len()
            )));
        }
    }
    let mut acc = Matrix4::zeros();
    for (i, q) in qs.iter().enumerate() {
        let c = q.quaternion();
        let v = Vector4::new(c.w, c.i, c.j, c.k);
        let w = weights.map_or(1.0, |w| w[i]);
        acc += w * v * v.transpose();
    }
    let eig = acc.symmetric_eigen();
    let best = eig.eigenvalues.imax();
    let mut v: Vector4<f64> = eig.eigenvectors.column(best).into_owned();
    if v[0] < 0.0 {
        v = -v;
    }
    Ok(Unit::new_normalize(RawQuaternion::new(v[0], v[1], v[2], v[3])))
}

/// Same rotation with a non-negative scalar part.
pub fn canonical(q: &Quaternion) -> Quaternion {
    if q.w < 0.0 {
        Unit::new_unchecked(-q.into_inner())
    } else {
        *q
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn rz(deg: f64) -> Quaternion {
        Quaternion::from_axis_angle(&Vector3::z_axis(), deg.to_radians())
    }

    fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
        (a.translation - b.translation).norm() <= tol
            && rotation_distance(&a.rotation, &b.rotation) <= tol
    }

    #[test]
    fn compose_matches_matrix_product() {
        let a = Pose::new(rz(90.0), Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::new(rz(90.0), Vector3::zeros());
        let c = compose(&a, &b);
        let m = a.to_homogeneous() * b.to_homogeneous();
        let x = nalgebra::Vector4::new(1.0, 0.0, 0.0, 1.0);
        let expected = m * x;
        let got = c.apply(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(got.x, expected.x, epsilon = 1e-12);
        assert_relative_eq!(got.y, expected.y, epsilon = 1e-12);
        assert_relative_eq!(got.z, expected.z, epsilon = 1e-12);
        // Rz(180°) takes (1,0,0) to (-1,0,0), then shift by (1,0,0).
        assert_relative_eq!(got.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(got.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_and_inverse() {
        let p = Pose::new(rz(33.0), Vector3::new(0.1, -0.2, 0.3));
        assert!(pose_close(&compose(&Pose::identity(), &p), &p, 1e-15));
        assert!(pose_close(&compose(&p, &invert(&p)), &Pose::identity(), 1e-9));
        assert!(pose_close(&invert(&Pose::identity()), &Pose::identity(), 0.0));
        let shift = invert(&Pose::from_translation(Vector3::new(1.0, 2.0, 3.0)));
        assert_eq!(shift.translation, Vector3::new(-1.0, -2.0, -3.0));
    }

    #[test]
    fn inverse_matches_matrix_inverse() {
        let p = Pose::new(
            Quaternion::from_euler_angles(0.3, -1.1, 2.0),
            Vector3::new(0.4, 0.5, -0.6),
        );
        let m_inv = p.to_homogeneous().try_inverse().unwrap();
        let diff = (invert(&p).to_homogeneous() - m_inv).abs().max();
        assert!(diff < 1e-12);
    }

    #[test]
    fn transform_points_cases() {
        let cloud = PointCloud::new(vec![Point3::new(1.0, 0.0, 0.0), Point3::origin()])
            .with_labels(vec![Label::EndEffector, Label::Background])
            .with_keypoint_ids(vec![3, NO_KEYPOINT]);
        assert_eq!(transform_points(&Pose::identity(), &cloud), cloud);

        let shifted = transform_points(&Pose::from_translation(Vector3::new(0.0, 0.0, 1.0)), &cloud);
        assert_eq!(shifted.points[1], Point3::new(0.0, 0.0, 1.0));
        assert_eq!(shifted.labels, cloud.labels);
        assert_eq!(shifted.keypoint_ids, cloud.keypoint_ids);

        let rotated = transform_points(&Pose::from_rotation(rz(90.0)), &cloud);
        let oracle = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0) * Vector3::x();
        assert!((rotated.points[0].coords - oracle).norm() < 1e-12);
    }

    #[test]
    fn rotation_distance_cases() {
        let q = rz(40.0);
        assert_eq!(rotation_distance(&q, &q), 0.0);
        assert_relative_eq!(rotation_distance(&Quaternion::identity(), &rz(90.0)), FRAC_PI_2, epsilon = 1e-15);
        let neg = Unit::new_unchecked(-q.into_inner());
        assert!(rotation_distance(&q, &neg) < 1e-15);
        assert_relative_eq!(rotation_distance(&rz(0.0), &rz(180.0)), PI, epsilon = 1e-12);
    }

    fn tetra() -> Vec<Point3<f64>> {
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
        ]
    }

    #[test]
    fn kabsch_trivial_cases() {
        let s = tetra();
        let p = kabsch_fit(&s, &s).unwrap();
        assert!(pose_close(&p, &Pose::identity(), 1e-12));

        let t: Vec<_> = s.iter().map(|p| p + Vector3::new(0.0, 0.0, 0.5)).collect();
        let p = kabsch_fit(&s, &t).unwrap();
        assert!(rotation_distance(&p.rotation, &Quaternion::identity()) < 1e-12);
        assert!((p.translation - Vector3::new(0.0, 0.0, 0.5)).norm() < 1e-12);
    }

    #[test]
    fn kabsch_rejects_degenerate_input() {
        let s = tetra();
        assert!(matches!(kabsch_fit(&s[..2], &s[..2]), Err(Error::DegenerateGeometry(_))));
        let line: Vec<_> = (0..5).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        assert!(matches!(kabsch_fit(&line, &line), Err(Error::DegenerateGeometry(_))));
        let same = vec![Point3::new(1.0, 1.0, 1.0); 4];
        assert!(kabsch_fit(&same, &same).is_err());
    }

    #[test]
    fn kabsch_corrects_reflection_for_planar_sets() {
        // Planar sets admit a reflection with zero residual; the fit must
        // still return a proper rotation.
        let s = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 2.0, 0.0),
            Point3::new(1.0, 2.0, 0.0),
        ];
        let truth = Pose::new(rz(70.0) * Quaternion::from_euler_angles(0.4, 0.0, 0.0), Vector3::new(1.0, 2.0, 3.0));
        let t: Vec<_> = s.iter().map(|p| truth.apply(p)).collect();
        let fit = kabsch_fit(&s, &t).unwrap();
        assert!(fit.rotation_matrix().determinant() > 0.0);
        assert!(pose_close(&fit, &truth, 1e-9));
    }

    #[test]
    fn quaternion_average_cases() {
        let q = Quaternion::from_euler_angles(0.2, 0.5, -0.3);
        let avg = quaternion_average(&[q, q, q], None).unwrap();
        assert!(rotation_distance(&avg, &q) < 1e-12);

        let neg = Unit::new_unchecked(-q.into_inner());
        let avg = quaternion_average(&[q, neg], None).unwrap();
        assert!(rotation_distance(&avg, &q) < 1e-12);

        let avg = quaternion_average(&[rz(10.0), rz(-10.0)], None).unwrap();
        assert!(rotation_distance(&avg, &Quaternion::identity()) < 1e-9);

        assert!(matches!(quaternion_average(&[], None), Err(Error::EmptyInput)));
    }

    /// Power iteration on the accumulator, independent of the eigen solver.
    fn power_iteration_average(qs: &[Quaternion]) -> Quaternion {
        let mut acc = Matrix4::zeros();
        for q in qs {
            let c = q.quaternion().coords;
            let v = Vector4::new(c.w, c.x, c.y, c.z);
            acc += v * v.transpose();
        }
        let mut v = Vector4::new(1.0, 0.3, 0.2, 0.1);
        for _ in 0..5000 {
            v = (acc * v).normalize();
        }
        Unit::new_normalize(RawQuaternion::new(v[0], v[1], v[2], v[3]))
    }

    #[test]
    fn quaternion_average_matches_power_iteration() {
        let qs = vec![
            rz(10.0),
            rz(-10.0),
            Quaternion::from_euler_angles(0.05, -0.02, 0.01),
            Quaternion::from_euler_angles(-0.03, 0.04, 0.2),
        ];
        let a = quaternion_average(&qs, None).unwrap();
        let b = power_iteration_average(&qs);
        assert!(rotation_distance(&a, &b) < 1e-9);
    }

    #[test]
    fn weights_shift_the_average() {
        let qs = [rz(0.0), rz(20.0)];
        let avg = quaternion_average(&qs, Some(&[1.0, 0.0])).unwrap();
        assert!(rotation_distance(&avg, &qs[0]) < 1e-12);
        assert!(quaternion_average(&qs, Some(&[1.0])).is_err());
    }

    #[test]
    fn pose_json_roundtrip_and_normalization() {
        let json = r#"{"q":[2.0,0.0,0.0,0.0],"t":[1.0,2.0,3.0]}"#;
        let p: Pose = serde_json::from_str(json).unwrap();
        assert_relative_eq!(p.rotation.w, 1.0);
        let back = serde_json::to_string(&p).unwrap();
        assert_eq!(back, r#"{"q":[1.0,0.0,0.0,0.0],"t":[1.0,2.0,3.0]}"#);
        assert!(serde_json::from_str::<Pose>(r#"{"q":[0,0,0,0],"t":[0,0,0]}"#).is_err());
        assert!(serde_json::from_str::<Pose>(r#"{"q":[1,0,0,0],"t":[0,0,0],"x":1}"#).is_err());
    }

    #[test]
    fn cloud_select_and_bounds() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(3.0, 0.0, 0.0),
            Point3::new(0.0, 4.0, 0.0),
        ])
        .with_labels(vec![Label::Arm, Label::EndEffector, Label::EndEffector]);
        let ee = cloud.select(&cloud.indices_with_label(Label::EndEffector));
        assert_eq!(ee.len(), 2);
        assert_eq!(ee.labels.as_ref().unwrap(), &vec![Label::EndEffector; 2]);
        assert_relative_eq!(cloud.bbox_diagonal(), 5.0);
        assert_eq!(PointCloud::default().bbox_diagonal(), 0.0);
    }
}
