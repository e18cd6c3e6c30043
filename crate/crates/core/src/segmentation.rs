//! Semantic segmentation interface and the single-linkage cluster filter
//! that drops stray end-effector predictions.

use std::collections::HashMap;

use nalgebra::Point3;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud};
use crate::spatial::voxel_key;

/// Stand-in for a learned per-point classifier.
pub trait SegmentationPredictor: Send + Sync {
    fn predict(&self, cloud: &PointCloud, rng: &mut dyn RngCore) -> Result<Vec<Label>>;
}

/// Returns the labels already stored in the cloud.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthSegmenter;

impl SegmentationPredictor for GroundTruthSegmenter {
    fn predict(&self, cloud: &PointCloud, _rng: &mut dyn RngCore) -> Result<Vec<Label>> {
        cloud.labels.clone().ok_or(Error::MissingLabels)
    }
}

/// Ground truth with random label flips plus false-positive EE speckle.
#[derive(Clone, Copy, Debug)]
pub struct NoisyOracleSegmenter {
    /// Probability that a label is replaced by one of the other two classes.
    pub flip_probability: f64,
    /// Probability that a non-EE point is reported as EE.
    pub speckle_rate: f64,
}

impl SegmentationPredictor for NoisyOracleSegmenter {
    fn predict(&self, cloud: &PointCloud, rng: &mut dyn RngCore) -> Result<Vec<Label>> {
        let truth = cloud.labels.as_ref().ok_or(Error::MissingLabels)?;
        Ok(truth
            .iter()
            .map(|&l| {
                let mut out = l;
                if rng.random::<f64>() < self.flip_probability {
                    let others: Vec<Label> = Label::ALL.into_iter().filter(|&o| o != l).collect();
                    out = others[rng.random_range(0..others.len())];
                }
                if out != Label::EndEffector && rng.random::<f64>() < self.speckle_rate {
                    out = Label::EndEffector;
                }
                out
            })
            .collect())
    }
}

/// Runs `predictor` and returns a copy of `cloud` carrying its labels.
pub fn predict_labels(
    cloud: &PointCloud,
    predictor: &dyn SegmentationPredictor,
    rng: &mut dyn RngCore,
) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let labels = predictor.predict(cloud, rng)?;
    if labels.len() != cloud.len() {
        return Err(Error::DegenerateGeometry(format!(
            "predictor returned {} labels for {} points",
            labels.len(),
            cloud.len()
        )));
    }
    let mut out = cloud.clone();
    out.labels = Some(labels);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    GroundTruth,
    NoisyOracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentationConfig {
    pub predictor: SegmenterKind,
    pub flip_probability: f64,
    pub speckle_rate: f64,
    pub linkage_distance: f64,
    pub min_cluster_fraction: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            predictor: SegmenterKind::GroundTruth,
            flip_probability: 0.0,
            speckle_rate: 0.0,
            linkage_distance: 0.03,
            min_cluster_fraction: 0.2,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("flip_probability", self.flip_probability),
            ("speckle_rate", self.speckle_rate),
            ("min_cluster_fraction", self.min_cluster_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("segmentation.{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.linkage_distance.is_finite() && self.linkage_distance > 0.0) {
            return Err(Error::Config(format!(
                "segmentation.linkage_distance must be positive, got {}",
                self.linkage_distance
            )));
        }
        Ok(())
    }

    pub fn build_predictor(&self) -> Box<dyn SegmentationPredictor> {
        match self.predictor {
            SegmenterKind::GroundTruth => Box::new(GroundTruthSegmenter),
            SegmenterKind::NoisyOracle => Box::new(NoisyOracleSegmenter {
                flip_probability: self.flip_probability,
                speckle_rate: self.speckle_rate,
            }),
        }
    }
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut i: usize) -> usize {
        while self.0[i] != i {
            self.0[i] = self.0[self.0[i]];
            i = self.0[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the graph linking points closer than
/// `distance`, i.e. single-linkage clusters cut at `distance`.
/// Components are returned with sorted members, ordered by first member.
pub fn single_linkage_clusters(points: &[Point3<f64>], distance: f64) -> Vec<Vec<usize>> {
    if points.is_empty() {
        return Vec::new();
    }
    // Cells small enough that each one is a clique; linked points are at
    // most two cells apart along every axis.
    let cell = distance / 3f64.sqrt();
    let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(voxel_key(p, cell)).or_default().push(i);
    }
    let mut keys: Vec<[i64; 3]> = cells.keys().copied().collect();
    keys.sort_unstable();
    let index: HashMap<[i64; 3], usize> = keys.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut uf = UnionFind((0..keys.len()).collect());
    let d2 = distance * distance;
    for (a, key) in keys.iter().enumerate() {
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                for dz in -2..=2i64 {
                    let other = [key[0] + dx, key[1] + dy, key[2] + dz];
                    let Some(&b) = index.get(&other) else { continue };
                    if b <= a || uf.find(a) == uf.find(b) {
                        continue;
                    }
                    let linked = cells[key].iter().any(|&i| {
                        cells[&other]
                            .iter()
                            .any(|&j| (points[i] - points[j]).norm_squared() <= d2)
                    });
                    if linked {
                        uf.union(a, b);
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut member_root = vec![0; points.len()];
    for (c, key) in keys.iter().enumerate() {
        let root = uf.find(c);
        for &i in &cells[key] {
            member_root[i] = root;
        }
    }
    for (i, root) in member_root.into_iter().enumerate() {
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

/// Keeps the dominant single-linkage cluster: largest first, then lower
/// centroid x, then lower first index. Returns indices into `points`.
pub fn cluster_filter(points: &[Point3<f64>], linkage_distance: f64, min_cluster_fraction: f64) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let total = points.len();
    let clusters = single_linkage_clusters(points, linkage_distance);
    let centroid_x = |c: &[usize]| c.iter().map(|&i| points[i].x).sum::<f64>() / c.len() as f64;
    clusters
        .into_iter()
        .filter(|c| c.len() as f64 >= min_cluster_fraction * total as f64)
        .min_by(|a, b| {
            b.len()
                .cmp(&a.len())
                .then(centroid_x(a).total_cmp(&centroid_x(b)))
                .then(a[0].cmp(&b[0]))
        })
        .ok_or(Error::NoValidCluster {
            total,
            min_fraction: min_cluster_fraction,
        })
}

/// Segments `cloud`, then returns its EE points after the cluster filter.
pub fn segment_end_effector(
    cloud: &PointCloud,
    predictor: &dyn SegmentationPredictor,
    cfg: &SegmentationConfig,
    rng: &mut dyn RngCore,
) -> Result<PointCloud> {
    let labeled = predict_labels(cloud, predictor, rng)?;
    let ee_idx = labeled.indices_with_label(Label::EndEffector);
    let ee_points: Vec<Point3<f64>> = ee_idx.iter().map(|&i| labeled.points[i]).collect();
    let keep = cluster_filter(&ee_points, cfg.linkage_distance, cfg.min_cluster_fraction)?;
    let chosen: Vec<usize> = keep.into_iter().map(|k| ee_idx[k]).collect();
    Ok(labeled.select(&chosen))
}
