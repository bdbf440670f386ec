//! Point clouds: validation, normalization, neighbor queries, normal
//! estimation, subsampling and noise augmentation.

mod io;
mod kdtree;
mod normals;
mod sampling;

pub use io::{parse_rows, parse_xyz, read_xyz, write_xyz};
pub use kdtree::KdTree;
pub use normals::{estimate_normals, DEFAULT_NORMAL_K};
pub use sampling::{augment_noise, sample_permutations, sample_subset_indices, DEFAULT_NOISE_BOUND};

use nalgebra::{Isometry3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Tolerance on the Euclidean norm of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PointCloudError {
    #[error("point cloud is empty")]
    Empty,
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("{normals} normals supplied for {points} points")]
    NormalCount { points: usize, normals: usize },
    #[error("normal {index} is not unit length (norm {norm})")]
    NonUnitNormal { index: usize, norm: f64 },
    #[error("all points coincide; scale is undefined")]
    DegenerateCloud,
    #[error("need more than {required} points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Ordered 3-D points with optional per-point unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Result<Self, PointCloudError> {
        if points.is_empty() {
            return Err(PointCloudError::Empty);
        }
        if let Some(index) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(PointCloudError::NonFinite { index });
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self, PointCloudError> {
        let mut cloud = Self::new(points)?;
        cloud.set_normals(normals)?;
        Ok(cloud)
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Result<Self, PointCloudError> {
        Self::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
    }

    pub fn set_normals(&mut self, normals: Vec<Vec3>) -> Result<(), PointCloudError> {
        if normals.len() != self.points.len() {
            return Err(PointCloudError::NormalCount {
                points: self.points.len(),
                normals: normals.len(),
            });
        }
        for (index, n) in normals.iter().enumerate() {
            let norm = n.norm();
            if !((norm - 1.0).abs() <= NORMAL_TOLERANCE) {
                return Err(PointCloudError::NonUnitNormal { index, norm });
            }
        }
        self.normals = Some(normals);
        Ok(())
    }

    pub fn without_normals(mut self) -> Self {
        self.normals = None;
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Vec3 {
        self.points[i]
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    /// Cloud made of the given source indices, in that order.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| indices.iter().map(|&i| ns[i]).collect()),
        }
    }

    /// Applies a rigid motion to points and normals.
    pub fn transformed(&self, motion: &Isometry3<f64>) -> PointCloud {
        PointCloud {
            points: self
                .points
                .iter()
                .map(|p| motion.transform_point(&(*p).into()).coords)
                .collect(),
            normals: self
                .normals
                .as_ref()
                .map(|ns| ns.iter().map(|n| motion.rotation * n).collect()),
        }
    }

    /// Centers x and y on zero and scales every axis by the largest
    /// remaining absolute coordinate, so the result lies in `[-1, 1]^3`.
    /// z is scaled but not shifted.
    pub fn normalize(&self) -> Result<(PointCloud, NormalizationTransform), PointCloudError> {
        let first = self.points[0];
        if self.points.iter().all(|p| *p == first) {
            return Err(PointCloudError::DegenerateCloud);
        }
        let c = self.centroid();
        let offset = Vec3::new(c.x, c.y, 0.0);
        let scale = self
            .points
            .iter()
            .flat_map(|p| (p - offset).iter().map(|v| v.abs()).collect::<Vec<_>>())
            .fold(0.0_f64, f64::max);
        if scale <= 0.0 {
            return Err(PointCloudError::DegenerateCloud);
        }
        let transform = NormalizationTransform { offset, scale };
        let cloud = PointCloud {
            points: self.points.iter().map(|p| transform.apply(p)).collect(),
            normals: self.normals.clone(),
        };
        Ok((cloud, transform))
    }
}

/// Maps world coordinates to normalized ones: `(p - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationTransform {
    pub offset: Vec3,
    pub scale: f64,
}

impl NormalizationTransform {
    pub fn identity() -> Self {
        Self {
            offset: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        (p - self.offset) / self.scale
    }

    pub fn invert(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.offset
    }

    pub fn invert_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| self.invert(p)).collect(),
            normals: cloud.normals.clone(),
        }
    }
}

/// Row `i` lists the `k` nearest other points of point `i`, nearest first.
///
/// Ordering is by squared Euclidean distance, then by index, so the result is
/// the same as an exhaustive sort.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<Vec<Vec<usize>>, PointCloudError> {
    if cloud.len() <= k {
        return Err(PointCloudError::TooFewPoints {
            required: k,
            got: cloud.len(),
        });
    }
    let tree = KdTree::build(cloud.points());
    Ok((0..cloud.len())
        .map(|i| tree.nearest(&cloud.points[i], k, Some(i)))
        .collect())
}
