//! ASCII PLY reader/writer for labeled point clouds.
//!
//! Written files carry `x y z` (float), `label` (uchar) and `keypoint_id`
//! (int). The reader accepts any property order and treats `label` and
//! `keypoint_id` as optional.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::{Label, PointCloud, NO_KEYPOINT};

pub fn to_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(64 + cloud.len() * 40);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar label\nproperty int keypoint_id\nend_header\n");
    for (i, p) in cloud.points.iter().enumerate() {
        let label = cloud.label(i).unwrap_or(Label::Background) as u8;
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            p.x as f32,
            p.y as f32,
            p.z as f32,
            label,
            cloud.keypoint_id(i)
        );
    }
    out
}

pub fn write(path: &Path, cloud: &PointCloud) -> Result<()> {
    std::fs::write(path, to_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text).map_err(|reason| Error::Ply {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn parse(text: &str) -> std::result::Result<PointCloud, String> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err("missing 'ply' magic".into());
    }
    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let line = lines.next().ok_or("unterminated header")?.trim();
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                if words.next() != Some("ascii") {
                    return Err(format!("unsupported format line '{line}'"));
                }
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words.next().ok_or("element without name")?;
                let count: usize = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| format!("bad element line '{line}'"))?;
                in_vertex = name == "vertex";
                if in_vertex {
                    vertex_count = Some(count);
                } else if count > 0 {
                    return Err(format!("unsupported element '{name}'"));
                }
            }
            Some("property") => {
                if in_vertex {
                    let name = words.last().ok_or("property without name")?;
                    props.push(name.to_string());
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(format!("unexpected header keyword '{other}'")),
        }
    }
    let n = vertex_count.ok_or("no vertex element")?;
    let find = |name: &str| props.iter().position(|p| p == name);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err("vertex element lacks x/y/z".into()),
    };
    let il = find("label");
    let ik = find("keypoint_id");

    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(if il.is_some() { n } else { 0 });
    let mut keypoints = Vec::with_capacity(if ik.is_some() { n } else { 0 });
    let mut fields: Vec<&str> = Vec::with_capacity(props.len());
    for row in 0..n {
        let line = lines.next().ok_or_else(|| format!("expected {n} vertices, found {row}"))?;
        fields.clear();
        fields.extend(line.split_whitespace());
        if fields.len() != props.len() {
            return Err(format!("vertex {row}: expected {} values, got {}", props.len(), fields.len()));
        }
        let num = |i: usize| -> std::result::Result<f64, String> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| format!("vertex {row}: bad number '{}'", fields[i]))
        };
        points.push(Point3::new(num(ix)?, num(iy)?, num(iz)?));
        if let Some(i) = il {
            let v: u8 = fields[i].parse().map_err(|_| format!("vertex {row}: bad label"))?;
            labels.push(Label::from_u8(v).ok_or_else(|| format!("vertex {row}: unknown label {v}"))?);
        }
        if let Some(i) = ik {
            let v: i32 = fields[i].parse().map_err(|_| format!("vertex {row}: bad keypoint id"))?;
            keypoints.push(if v < 0 { NO_KEYPOINT } else { v });
        }
    }
    Ok(PointCloud {
        points,
        labels: il.map(|_| labels),
        keypoint_ids: ik.map(|_| keypoints),
    })
}
