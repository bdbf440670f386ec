use nalgebra::{Matrix3, SymmetricEigen};

use super::{KdTree, PointCloud, PointCloudError, Vec3};

pub const DEFAULT_NORMAL_K: usize = 16;

/// PCA normals: for each point, the eigenvector of the smallest eigenvalue of
/// the covariance of the point and its `k` nearest neighbors, flipped so that
/// it faces `viewpoint`.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
    viewpoint: &Vec3,
) -> Result<PointCloud, PointCloudError> {
    if k < 3 {
        return Err(PointCloudError::InvalidParameter(format!(
            "normal estimation needs k >= 3, got {k}"
        )));
    }
    if cloud.len() <= k {
        return Err(PointCloudError::TooFewPoints {
            required: k,
            got: cloud.len(),
        });
    }
    let points = cloud.points();
    let tree = KdTree::build(points);
    let normals = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut hood = Vec::with_capacity(k + 1);
            hood.push(*p);
            hood.extend(tree.nearest(p, k, Some(i)).into_iter().map(|j| points[j]));
            let n = smallest_axis(&hood);
            if n.dot(&(viewpoint - p)) < 0.0 {
                -n
            } else {
                n
            }
        })
        .collect();
    let mut out = cloud.clone();
    out.set_normals(normals)?;
    Ok(out)
}

fn smallest_axis(hood: &[Vec3]) -> Vec3 {
    let n = hood.len() as f64;
    let mean = hood.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let cov = hood.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / n;
    let eig = SymmetricEigen::new(cov);
    let idx = eig.eigenvalues.imin();
    let v: Vec3 = eig.eigenvectors.column(idx).into_owned();
    let norm = v.norm();
    if norm > 0.0 {
        v / norm
    } else {
        Vec3::z()
    }
}
