//! Parametric two-finger gripper built from a union of boxes.
//!
//! End-effector frame: `x` points along the fingers, `y` is the opening
//! direction, `z` points away from the camera-nominal face (which sits at
//! `z = 0`). The origin is `origin_inset` behind the finger tips along `x`
//! and centered in `y`.

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud, NO_KEYPOINT};

/// Rigid sub-assembly of the gripper; a finger includes its knuckle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EePart {
    Palm,
    FingerPositive,
    FingerNegative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GripperDims {
    /// Palm extent along x.
    pub palm_length: f64,
    /// Palm extent along y.
    pub palm_width: f64,
    /// Palm extent along z.
    pub palm_depth: f64,
    /// Knuckle extent along x; knuckles join the palm side to each finger.
    pub knuckle_length: f64,
    pub finger_length: f64,
    pub finger_width: f64,
    pub finger_depth: f64,
    /// Clear distance between the inner finger faces.
    pub finger_gap: f64,
    /// Distance from the finger-tip face to the frame origin along x.
    pub origin_inset: f64,
}

impl Default for GripperDims {
    fn default() -> Self {
        Self {
            palm_length: 0.05,
            palm_width: 0.08,
            palm_depth: 0.06,
            knuckle_length: 0.02,
            finger_length: 0.05,
            finger_width: 0.02,
            finger_depth: 0.02,
            finger_gap: 0.14,
            origin_inset: 0.015,
        }
    }
}

pub const DEFAULT_SAMPLING_DENSITY: f64 = 600_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn contains(&self, p: &Point3<f64>, inflate: f64) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] - inflate && p[a] <= self.max[a] + inflate)
    }

    pub fn diagonal(&self) -> f64 {
        (self.max - self.min).norm()
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }
}

/// How one axis of the de-rotated end-effector extent maps to the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum AxisRule {
    /// origin = max − inset
    Max { inset: f64 },
    /// origin = min + inset
    Min { inset: f64 },
    /// origin = (max + min) / 2 + offset
    Mid { offset: f64 },
}

impl AxisRule {
    pub fn origin(&self, lo: f64, hi: f64) -> f64 {
        match *self {
            AxisRule::Max { inset } => hi - inset,
            AxisRule::Min { inset } => lo + inset,
            AxisRule::Mid { offset } => 0.5 * (hi + lo) + offset,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RptDescriptor {
    pub x: AxisRule,
    pub y: AxisRule,
    pub z: AxisRule,
}

impl RptDescriptor {
    /// Origin of the end-effector frame from per-axis extents `[lo, hi]`.
    pub fn origin_from_extents(&self, lo: [f64; 3], hi: [f64; 3]) -> Vector3<f64> {
        Vector3::new(
            self.x.origin(lo[0], hi[0]),
            self.y.origin(lo[1], hi[1]),
            self.z.origin(lo[2], hi[2]),
        )
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    part: EePart,
    min: Point3<f64>,
    max: Point3<f64>,
}

impl Block {
    fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[derive(Clone, Debug)]
pub struct EEModel {
    pub dims: GripperDims,
    pub density: f64,
    /// Surface samples in the EE frame, labeled end-effector, keypoints tagged.
    pub surface: PointCloud,
    pub normals: Vec<Vector3<f64>>,
    pub face_ids: Vec<u32>,
    pub parts: Vec<EePart>,
    pub ref_keypoints: [Point3<f64>; 6],
    pub rpt_descriptor: RptDescriptor,
    pub bbox: Aabb,
    pub face_count: u32,
}

fn check_dim(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidDimensions(format!("{name} must be positive, got {v}")))
    }
}

fn blocks(d: &GripperDims) -> Vec<Block> {
    let dx = d.origin_inset - d.finger_length;
    let half_gap = 0.5 * d.finger_gap;
    let outer = half_gap + d.finger_width;
    let knuckle_inner = half_gap.min(0.5 * d.palm_width);
    let mut out = vec![Block {
        part: EePart::Palm,
        min: Point3::new(dx - d.palm_length, -0.5 * d.palm_width, 0.0),
        max: Point3::new(dx, 0.5 * d.palm_width, d.palm_depth),
    }];
    for (part, s) in [(EePart::FingerPositive, 1.0), (EePart::FingerNegative, -1.0)] {
        let span = |a: f64, b: f64| if s > 0.0 { (a, b) } else { (-b, -a) };
        let (ky0, ky1) = span(knuckle_inner, outer);
        out.push(Block {
            part,
            min: Point3::new(dx - d.knuckle_length, ky0, 0.0),
            max: Point3::new(dx, ky1, d.finger_depth),
        });
        let (py0, py1) = span(half_gap, outer);
        out.push(Block {
            part,
            min: Point3::new(dx, py0, 0.0),
            max: Point3::new(d.origin_inset, py1, d.finger_depth),
        });
    }
    out
}

fn reference_keypoints(d: &GripperDims) -> [Point3<f64>; 6] {
    let dx = d.origin_inset - d.finger_length;
    let half_palm = 0.5 * d.palm_width;
    let half_gap = 0.5 * d.finger_gap;
    let outer = half_gap + d.finger_width;
    let back = dx - d.palm_length;
    [
        Point3::new(back, half_palm, 0.0),
        Point3::new(back, -half_palm, 0.0),
        Point3::new(dx, -outer, 0.0),
        Point3::new(dx, outer, 0.0),
        Point3::new(d.origin_inset, half_gap, 0.0),
        Point3::new(d.origin_inset, -half_gap, 0.0),
    ]
}

/// Samples the boundary of the box union on per-face grids that include the
/// face edges, so axis extremes are represented exactly.
pub fn build_ee_model(dims: &GripperDims, density: f64) -> Result<EEModel> {
    for (name, v) in [
        ("palm_length", dims.palm_length),
        ("palm_width", dims.palm_width),
        ("palm_depth", dims.palm_depth),
        ("knuckle_length", dims.knuckle_length),
        ("finger_length", dims.finger_length),
        ("finger_width", dims.finger_width),
        ("finger_depth", dims.finger_depth),
        ("finger_gap", dims.finger_gap),
        ("origin_inset", dims.origin_inset),
        ("sampling density", density),
    ] {
        check_dim(name, v)?;
    }
    if dims.origin_inset >= dims.finger_length {
        return Err(Error::InvalidDimensions(
            "origin_inset must be shorter than the fingers".into(),
        ));
    }

    let spacing = density.sqrt().recip();
    let boxes = blocks(dims);
    let eps = 1e-7;

    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut face_ids = Vec::new();
    let mut parts = Vec::new();
    // Faces ordered -z first so camera-facing samples get the lowest indices.
    const FACES: [(usize, f64); 6] = [(2, -1.0), (2, 1.0), (0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0)];
    for (bi, b) in boxes.iter().enumerate() {
        for (fi, &(axis, side)) in FACES.iter().enumerate() {
            let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
            let (lu, lv) = (b.max[u] - b.min[u], b.max[v] - b.min[v]);
            let nu = (lu / spacing).ceil().max(1.0) as usize + 1;
            let nv = (lv / spacing).ceil().max(1.0) as usize + 1;
            let mut n = Vector3::zeros();
            n[axis] = side;
            let fixed = if side < 0.0 { b.min[axis] } else { b.max[axis] };
            for i in 0..nu {
                for j in 0..nv {
                    let mut p = Point3::origin();
                    p[axis] = fixed;
                    p[u] = if i + 1 == nu { b.max[u] } else { b.min[u] + lu * i as f64 / (nu - 1) as f64 };
                    p[v] = if j + 1 == nv { b.max[v] } else { b.min[v] + lv * j as f64 / (nv - 1) as f64 };
                    let probe = p + n * eps;
                    if boxes.iter().any(|o| o.contains(&probe)) {
                        continue;
                    }
                    points.push(p);
                    normals.push(n);
                    face_ids.push((bi * FACES.len() + fi) as u32);
                    parts.push(b.part);
                }
            }
        }
    }

    let ref_keypoints = reference_keypoints(dims);
    let mut keypoint_ids = vec![NO_KEYPOINT; points.len()];
    for (k, kp) in ref_keypoints.iter().enumerate() {
        let (idx, d) = points
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p - kp).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("model has samples");
        if d > 1e-3 || keypoint_ids[idx] != NO_KEYPOINT {
            return Err(Error::InvalidDimensions(format!(
                "reference keypoint {k} is not represented on the sampled surface"
            )));
        }
        keypoint_ids[idx] = k as i32;
    }

    let mut lo = boxes[0].min;
    let mut hi = boxes[0].max;
    for b in &boxes[1..] {
        lo = lo.inf(&b.min);
        hi = hi.sup(&b.max);
    }

    let n = points.len();
    Ok(EEModel {
        dims: dims.clone(),
        density,
        surface: PointCloud::new(points)
            .with_labels(vec![Label::EndEffector; n])
            .with_keypoint_ids(keypoint_ids),
        normals,
        face_ids,
        parts,
        ref_keypoints,
        rpt_descriptor: RptDescriptor {
            x: AxisRule::Max { inset: dims.origin_inset },
            y: AxisRule::Mid { offset: 0.0 },
            z: AxisRule::Min { inset: 0.0 },
        },
        bbox: Aabb { min: lo, max: hi },
        face_count: (boxes.len() * FACES.len()) as u32,
    })
}

impl EEModel {
    /// Copy of the model with the samples of `hidden` parts removed.
    pub fn without_parts(&self, hidden: &[EePart]) -> EEModel {
        if hidden.is_empty() {
            return self.clone();
        }
        let keep: Vec<usize> = (0..self.parts.len())
            .filter(|&i| !hidden.contains(&self.parts[i]))
            .collect();
        EEModel {
            surface: self.surface.select(&keep),
            normals: keep.iter().map(|&i| self.normals[i]).collect(),
            face_ids: keep.iter().map(|&i| self.face_ids[i]).collect(),
            parts: keep.iter().map(|&i| self.parts[i]).collect(),
            ..self.clone()
        }
    }

    pub fn len(&self) -> usize {
        self.surface.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surface.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extents(points: &[Point3<f64>]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    #[test]
    fn descriptor_recovers_origin_from_full_surface() {
        let m = build_ee_model(&GripperDims::default(), DEFAULT_SAMPLING_DENSITY).unwrap();
        assert!(m.len() >= 20_000, "only {} samples", m.len());
        let (lo, hi) = extents(&m.surface.points);
        let origin = m.rpt_descriptor.origin_from_extents(lo, hi);
        assert!(origin.norm() < 1e-9, "origin {origin:?}");
        assert_eq!(m.rpt_descriptor.x, AxisRule::Max { inset: 0.015 });
    }

    #[test]
    fn keypoints_lie_on_the_surface() {
        let m = build_ee_model(&GripperDims::default(), DEFAULT_SAMPLING_DENSITY).unwrap();
        let tagged = m.surface.keypoints();
        assert_eq!(tagged.iter().map(|t| t.0).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4, 5]);
        for (k, idx) in tagged {
            assert!((m.surface.points[idx] - m.ref_keypoints[k]).norm() < 1e-3);
            // Tagged samples sit on camera-facing faces.
            assert_eq!(m.normals[idx], -Vector3::z());
        }
    }

    #[test]
    fn finger_tips_are_one_gap_apart() {
        let dims = GripperDims { finger_gap: 0.11, ..Default::default() };
        let m = build_ee_model(&dims, DEFAULT_SAMPLING_DENSITY).unwrap();
        assert!(((m.ref_keypoints[4] - m.ref_keypoints[5]).norm() - 0.11).abs() < 1e-12);
    }

    #[test]
    fn doubling_density_doubles_samples() {
        let dims = GripperDims::default();
        let a = build_ee_model(&dims, 300_000.0).unwrap().len() as f64;
        let b = build_ee_model(&dims, 600_000.0).unwrap().len() as f64;
        let ratio = b / a;
        assert!((ratio - 2.0).abs() <= 0.2, "ratio {ratio}");
    }

    /// Exposed surface area of the default gripper, computed by hand from
    /// the box layout (palm + two knuckles + two pads, minus contact patches).
    #[test]
    fn sample_count_tracks_area_times_density() {
        let d = GripperDims::default();
        let palm = 2.0 * (d.palm_length * d.palm_width + d.palm_length * d.palm_depth + d.palm_width * d.palm_depth);
        let knuckle_w = d.finger_gap / 2.0 + d.finger_width - d.palm_width / 2.0;
        let knuckle = 2.0 * (d.knuckle_length * knuckle_w + d.knuckle_length * d.finger_depth + knuckle_w * d.finger_depth);
        let pad = 2.0 * (d.finger_length * d.finger_width + d.finger_length * d.finger_depth + d.finger_width * d.finger_depth);
        // knuckle/palm contact and pad/knuckle contact are hidden on both sides
        let contacts = 2.0 * (d.knuckle_length * d.finger_depth) + 2.0 * (d.finger_width * d.finger_depth);
        let area = palm + 2.0 * (knuckle + pad) - 2.0 * contacts;
        let density = 600_000.0;
        let m = build_ee_model(&d, density).unwrap();
        let ratio = m.len() as f64 / (area * density);
        // Grid edges add one extra row per face, so the count runs high.
        assert!((1.0..1.25).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_bad_dimensions() {
        let dims = GripperDims { palm_width: -1.0, ..Default::default() };
        assert!(matches!(build_ee_model(&dims, 1e5), Err(Error::InvalidDimensions(_))));
        assert!(build_ee_model(&GripperDims::default(), 0.0).is_err());
        let dims = GripperDims { origin_inset: 0.2, ..Default::default() };
        assert!(build_ee_model(&dims, 1e5).is_err());
    }

    #[test]
    fn hiding_a_finger_drops_its_samples_and_keypoint() {
        let m = build_ee_model(&GripperDims::default(), DEFAULT_SAMPLING_DENSITY).unwrap();
        let h = m.without_parts(&[EePart::FingerPositive]);
        assert!(h.len() < m.len());
        assert!(h.parts.iter().all(|p| *p != EePart::FingerPositive));
        let ids: Vec<usize> = h.surface.keypoints().iter().map(|t| t.0).collect();
        assert_eq!(ids, vec![0, 1, 2, 5]);
    }
}
