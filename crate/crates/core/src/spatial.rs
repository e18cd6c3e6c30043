//! Static 3-D kd-tree and voxel-grid helpers.
//!
//! Nearest-neighbor ties resolve to the smallest point index so every
//! query is reproducible regardless of tree layout.

use std::collections::HashMap;

use nalgebra::Point3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    pub fn new(points: &[Point3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.iter().map(|p| [p.x, p.y, p.z]).collect(),
            order: (0..points.len()).collect(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            tree.build(0, points.len());
        }
        tree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in &self.order[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(self.points[i][a]);
                hi[a] = hi[a].max(self.points[i][a]);
            }
        }
        let axis = (0..3)
            .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
            .unwrap_or(0);
        if hi[axis] - lo[axis] <= 0.0 {
            self.nodes.push(Node::Leaf { start, end });
            return id;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build(start, mid);
        let right = self.build(mid, end);
        self.nodes[id] = Node::Split { axis, value, left, right };
        id
    }

    /// Nearest point as `(index, squared distance)`.
    pub fn nearest(&self, q: &Point3<f64>) -> Option<(usize, f64)> {
        self.nearest_within(q, f64::INFINITY)
    }

    /// Nearest point no farther than `max_distance`.
    pub fn nearest_within(&self, q: &Point3<f64>, max_distance: f64) -> Option<(usize, f64)> {
        if self.is_empty() {
            return None;
        }
        let q = [q.x, q.y, q.z];
        let limit = max_distance * max_distance;
        let mut best: Option<(usize, f64)> = None;
        self.nearest_rec(0, &q, limit, &mut best);
        best
    }

    fn nearest_rec(&self, node: usize, q: &[f64; 3], limit: f64, best: &mut Option<(usize, f64)>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &i in &self.order[start..end] {
                    let d = dist2(&self.points[i], q);
                    if d > limit {
                        continue;
                    }
                    let better = match *best {
                        None => true,
                        Some((bi, bd)) => d < bd || (d == bd && i < bi),
                    };
                    if better {
                        *best = Some((i, d));
                    }
                }
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.nearest_rec(near, q, limit, best);
                let bound = best.map_or(limit, |(_, d)| d.min(limit));
                // `<=` keeps equal-distance candidates on the far side reachable for tie-breaking.
                if diff * diff <= bound {
                    self.nearest_rec(far, q, limit, best);
                }
            }
        }
    }

    /// Indices of all points within `radius` of `q`, ascending.
    pub fn within(&self, q: &Point3<f64>, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        if !self.is_empty() {
            self.within_rec(0, &[q.x, q.y, q.z], radius * radius, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn within_rec(&self, node: usize, q: &[f64; 3], r2: f64, out: &mut Vec<usize>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                out.extend(
                    self.order[start..end]
                        .iter()
                        .copied()
                        .filter(|&i| dist2(&self.points[i], q) <= r2),
                );
            }
            Node::Split { axis, value, left, right } => {
                let diff = q[axis] - value;
                if diff <= 0.0 || diff * diff <= r2 {
                    self.within_rec(left, q, r2, out);
                }
                if diff >= 0.0 || diff * diff <= r2 {
                    self.within_rec(right, q, r2, out);
                }
            }
        }
    }

    /// True when any point lies within `radius` of `q`.
    pub fn any_within(&self, q: &Point3<f64>, radius: f64) -> bool {
        self.nearest_within(q, radius).is_some()
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub(crate) fn voxel_key(p: &Point3<f64>, size: f64) -> [i64; 3] {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// Keeps the lowest-index point of every occupied voxel. Returned indices
/// are ascending; a non-positive `size` keeps everything.
pub fn voxel_downsample(points: &[Point3<f64>], size: f64) -> Vec<usize> {
    if size <= 0.0 {
        return (0..points.len()).collect();
    }
    let mut seen: HashMap<[i64; 3], usize> = HashMap::with_capacity(points.len() / 4);
    for (i, p) in points.iter().enumerate() {
        seen.entry(voxel_key(p, size)).or_insert(i);
    }
    let mut kept: Vec<usize> = seen.into_values().collect();
    kept.sort_unstable();
    kept
}
