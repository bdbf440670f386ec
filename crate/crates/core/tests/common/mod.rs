#![allow(dead_code)]

use graspkit::gripper::{GraspPose, GripperSpec};
use graspkit::pointcloud::{PointCloud, Vec3};
use nalgebra::{Isometry3, Matrix3, Quaternion, Translation3, UnitQuaternion};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn random_unit_quaternion<R: Rng>(rng: &mut R) -> UnitQuaternion<f64> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        if q.norm() > 1e-3 {
            return UnitQuaternion::new_normalize(q);
        }
    }
}

/// Rotation matrix written out from (w, x, y, z).
pub fn rotation_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Coordinates of `p` along the columns of the pose's rotation.
pub fn local_coords(pose: &GraspPose, p: &Vec3) -> Vec3 {
    let m = rotation_matrix(&pose.rotation);
    let d = p - pose.center;
    Vec3::new(
        m.column(0).dot(&d),
        m.column(1).dot(&d),
        m.column(2).dot(&d),
    )
}

/// Closing region: open along the closing axis, closed elsewhere.
pub fn oracle_between(spec: &GripperSpec, pose: &GraspPose, p: &Vec3) -> bool {
    let l = local_coords(pose, p);
    l.x.abs() < 0.5 * pose.width
        && l.y.abs() <= 0.5 * spec.finger_height
        && l.z <= 0.0
        && l.z >= -spec.finger_length
}

/// Inflated fingers and base as (center, half extents) in the gripper frame.
pub fn oracle_boxes(spec: &GripperSpec, pose: &GraspPose) -> [(Vec3, Vec3); 3] {
    let hw = 0.5 * pose.width;
    let t = spec.finger_thickness;
    let l = spec.finger_length;
    let finger = Vec3::new(0.5 * t, 0.5 * spec.finger_height, 0.5 * l);
    [
        (Vec3::new(-hw - 0.5 * t, 0.0, -0.5 * l), finger),
        (Vec3::new(hw + 0.5 * t, 0.0, -0.5 * l), finger),
        (
            Vec3::new(0.0, 0.0, -l - 0.5 * spec.base_depth),
            Vec3::new(hw + t, 0.5 * spec.base_height, 0.5 * spec.base_depth),
        ),
    ]
}

pub fn oracle_collides(spec: &GripperSpec, pose: &GraspPose, p: &Vec3) -> bool {
    let l = local_coords(pose, p);
    let m = spec.collision_margin;
    oracle_boxes(spec, pose)
        .iter()
        .any(|(c, h)| (0..3).all(|i| (l[i] - c[i]).abs() <= h[i] + m))
}

pub fn random_pose<R: Rng>(rng: &mut R, spec: &GripperSpec, spread: f64) -> GraspPose {
    GraspPose::new(
        Vec3::from_fn(|_, _| rng.random_range(-spread..spread)),
        random_unit_quaternion(rng),
        rng.random_range(0.0..spec.max_width),
    )
}

/// Points scattered around the pose center, a share of them placed inside
/// the gripper's local bounding region so both tests see hits.
pub fn scene_points<R: Rng>(rng: &mut R, pose: &GraspPose, n: usize) -> Vec<Vec3> {
    (0..n)
        .map(|i| {
            if i % 2 == 0 {
                let local = Vec3::new(
                    rng.random_range(-0.07..0.07),
                    rng.random_range(-0.02..0.02),
                    rng.random_range(-0.08..0.01),
                );
                pose.center + pose.rotation * local
            } else {
                pose.center + Vec3::from_fn(|_, _| rng.random_range(-0.12..0.12))
            }
        })
        .collect()
}

pub fn random_motion<R: Rng>(rng: &mut R) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ),
        random_unit_quaternion(rng),
    )
}

/// Uniform points in a cube, in generic position with probability one.
pub fn random_cloud<R: Rng>(rng: &mut R, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)))
            .collect(),
    )
    .unwrap()
}
