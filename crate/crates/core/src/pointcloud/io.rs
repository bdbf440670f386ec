use std::fmt::Write as _;
use std::path::Path;

use super::{PointCloud, PointCloudError, Vec3};

/// Parses whitespace-separated rows of exactly `N` floats; `#` starts a
/// comment.
pub fn parse_rows<const N: usize>(text: &str) -> Result<Vec<[f64; N]>, PointCloudError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != N {
            return Err(PointCloudError::Parse {
                line: i + 1,
                message: format!("expected {N} columns, found {}", fields.len()),
            });
        }
        let mut row = [0.0; N];
        for (slot, f) in row.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| PointCloudError::Parse {
                line: i + 1,
                message: format!("not a number: {f:?}"),
            })?;
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_xyz(text: &str) -> Result<PointCloud, PointCloudError> {
    let rows = parse_rows::<3>(text)?;
    PointCloud::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
}

pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud, PointCloudError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| PointCloudError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_xyz(&text)
}

/// One `x y z` line per point, shortest round-trip float formatting.
pub fn write_xyz(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 32);
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}
