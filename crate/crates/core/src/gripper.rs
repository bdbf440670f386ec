//! Three-box parallel-jaw gripper model.
//!
//! Gripper frame: local +z is the approach axis (base towards fingertips),
//! local +x is the closing axis, +y completes a right-handed frame. The grasp
//! center sits midway between the inner finger faces on the fingertip line,
//! so the fingers occupy `z ∈ [-finger_length, 0]` and the base sits behind
//! them.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::pointcloud::{PointCloud, Vec3};

/// Tolerance on the norm of quaternions that must be unit.
pub const UNIT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GripperError {
    #[error("gripper field `{field}` must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("collision_margin must be >= 0, got {0}")]
    NegativeMargin(f64),
    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),
    #[error("width {width} outside [0, {max_width}]")]
    WidthOutOfRange { width: f64, max_width: f64 },
    #[error("non-finite pose component")]
    NonFinite,
}

/// Gripper geometry in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GripperSpec {
    /// Finger extent along the approach axis.
    pub finger_length: f64,
    /// Finger extent along the closing axis.
    pub finger_thickness: f64,
    /// Finger extent along the third axis.
    pub finger_height: f64,
    /// Largest inner-face to inner-face opening.
    pub max_width: f64,
    pub base_depth: f64,
    pub base_height: f64,
    /// Inflation applied to every solid box in collision tests.
    pub collision_margin: f64,
}

impl Default for GripperSpec {
    fn default() -> Self {
        Self {
            finger_length: 0.05,
            finger_thickness: 0.01,
            finger_height: 0.02,
            max_width: 0.08,
            base_depth: 0.02,
            base_height: 0.02,
            collision_margin: 0.003,
        }
    }
}

impl GripperSpec {
    pub const KEYS: [&'static str; 7] = [
        "finger_length",
        "finger_thickness",
        "finger_height",
        "max_width",
        "base_depth",
        "base_height",
        "collision_margin",
    ];

    pub fn validate(&self) -> Result<(), GripperError> {
        for (field, value) in [
            ("finger_length", self.finger_length),
            ("finger_thickness", self.finger_thickness),
            ("finger_height", self.finger_height),
            ("max_width", self.max_width),
            ("base_depth", self.base_depth),
            ("base_height", self.base_height),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(GripperError::NonPositive { field, value });
            }
        }
        if !(self.collision_margin >= 0.0 && self.collision_margin.is_finite()) {
            return Err(GripperError::NegativeMargin(self.collision_margin));
        }
        Ok(())
    }

    /// Defaults overridden by whichever keys `cfg` carries.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut spec = Self::default();
        cfg.read_into("finger_length", &mut spec.finger_length)?;
        cfg.read_into("finger_thickness", &mut spec.finger_thickness)?;
        cfg.read_into("finger_height", &mut spec.finger_height)?;
        cfg.read_into("max_width", &mut spec.max_width)?;
        cfg.read_into("base_depth", &mut spec.base_depth)?;
        cfg.read_into("base_height", &mut spec.base_height)?;
        cfg.read_into("collision_margin", &mut spec.collision_margin)?;
        spec.validate().map_err(|e| ConfigError::Invalid {
            key: "gripper".into(),
            reason: e.to_string(),
        })?;
        Ok(spec)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("finger_length", self.finger_length);
        cfg.set("finger_thickness", self.finger_thickness);
        cfg.set("finger_height", self.finger_height);
        cfg.set("max_width", self.max_width);
        cfg.set("base_depth", self.base_depth);
        cfg.set("base_height", self.base_height);
        cfg.set("collision_margin", self.collision_margin);
    }
}

/// Checks `q` is unit within [`UNIT_TOLERANCE`] and wraps it.
pub fn unit_quaternion(q: Quaternion<f64>) -> Result<UnitQuaternion<f64>, GripperError> {
    let norm = q.norm();
    if !((norm - 1.0).abs() < UNIT_TOLERANCE) {
        return Err(GripperError::NonUnitQuaternion(norm));
    }
    Ok(UnitQuaternion::new_unchecked(q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPose {
    pub center: Vec3,
    pub rotation: UnitQuaternion<f64>,
    pub width: f64,
}

impl GraspPose {
    pub fn new(center: Vec3, rotation: UnitQuaternion<f64>, width: f64) -> Self {
        Self {
            center,
            rotation,
            width,
        }
    }

    pub fn validate(&self, spec: &GripperSpec) -> Result<(), GripperError> {
        if !self.center.iter().all(|c| c.is_finite()) || !self.width.is_finite() {
            return Err(GripperError::NonFinite);
        }
        let norm = self.rotation.quaternion().norm();
        if !((norm - 1.0).abs() < UNIT_TOLERANCE) {
            return Err(GripperError::NonUnitQuaternion(norm));
        }
        if !(0.0..=spec.max_width).contains(&self.width) {
            return Err(GripperError::WidthOutOfRange {
                width: self.width,
                max_width: spec.max_width,
            });
        }
        Ok(())
    }

    pub fn approach_axis(&self) -> Vec3 {
        self.rotation * Vec3::z()
    }

    pub fn closing_axis(&self) -> Vec3 {
        self.rotation * Vec3::x()
    }

    /// The same grasp after a rigid motion of the world.
    pub fn transformed(&self, motion: &nalgebra::Isometry3<f64>) -> GraspPose {
        GraspPose {
            center: motion.transform_point(&self.center.into()).coords,
            rotation: motion.rotation * self.rotation,
            width: self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    pub center: Vec3,
    pub half_extents: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

/// True iff `point`, in box coordinates, lies within `half_extents + margin`
/// on every axis (boundary included).
pub fn point_in_obb(point: &Vec3, obb: &OrientedBox, margin: f64) -> bool {
    let local = obb.rotation.inverse_transform_vector(&(point - obb.center));
    (0..3).all(|i| local[i].abs() <= obb.half_extents[i] + margin)
}

/// Left finger, right finger and base boxes for `pose`.
pub fn gripper_boxes(spec: &GripperSpec, pose: &GraspPose) -> [OrientedBox; 3] {
    let half_w = 0.5 * pose.width;
    let t = spec.finger_thickness;
    let l = spec.finger_length;
    let finger_half = Vec3::new(0.5 * t, 0.5 * spec.finger_height, 0.5 * l);
    let place = |local: Vec3, half_extents: Vec3| OrientedBox {
        center: pose.center + pose.rotation * local,
        half_extents,
        rotation: pose.rotation,
    };
    [
        place(Vec3::new(-(half_w + 0.5 * t), 0.0, -0.5 * l), finger_half),
        place(Vec3::new(half_w + 0.5 * t, 0.0, -0.5 * l), finger_half),
        place(
            Vec3::new(0.0, 0.0, -l - 0.5 * spec.base_depth),
            Vec3::new(half_w + t, 0.5 * spec.base_height, 0.5 * spec.base_depth),
        ),
    ]
}

/// A pose's gripper expressed as tests in its own local frame.
///
/// This is the evaluation path used by the fitness loop: each point is
/// rotated into the gripper frame once and then compared against the gap and
/// the three inflated solids.
#[derive(Debug, Clone, Copy)]
pub struct GripperFrame {
    center: Vec3,
    to_local: Matrix3<f64>,
    half_width: f64,
    spec: GripperSpec,
}

impl GripperFrame {
    pub fn new(spec: &GripperSpec, pose: &GraspPose) -> Self {
        Self {
            center: pose.center,
            to_local: pose.rotation.to_rotation_matrix().matrix().transpose(),
            half_width: 0.5 * pose.width,
            spec: *spec,
        }
    }

    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.to_local * (p - self.center)
    }

    /// Closing region between the inner finger faces. The faces themselves
    /// belong to the fingers, so the gap is open along x.
    pub fn in_gap(&self, local: &Vec3) -> bool {
        local.x.abs() < self.half_width
            && local.y.abs() <= 0.5 * self.spec.finger_height
            && local.z <= 0.0
            && local.z >= -self.spec.finger_length
    }

    pub fn collides(&self, local: &Vec3) -> bool {
        let s = &self.spec;
        let m = s.collision_margin;
        let t = s.finger_thickness;
        let l = s.finger_length;
        let finger_y = local.y.abs() <= 0.5 * s.finger_height + m;
        let finger_z = (local.z + 0.5 * l).abs() <= 0.5 * l + m;
        if finger_y && finger_z {
            let off = (local.x.abs() - (self.half_width + 0.5 * t)).abs();
            if off <= 0.5 * t + m {
                return true;
            }
        }
        local.x.abs() <= self.half_width + t + m
            && local.y.abs() <= 0.5 * s.base_height + m
            && (local.z + l + 0.5 * s.base_depth).abs() <= 0.5 * s.base_depth + m
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }
}

/// Indices of cloud points inside the closing region.
pub fn points_between_fingers(cloud: &PointCloud, spec: &GripperSpec, pose: &GraspPose) -> Vec<usize> {
    let frame = GripperFrame::new(spec, pose);
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| frame.in_gap(&frame.to_local(p)))
        .map(|(i, _)| i)
        .collect()
}

/// True iff any point lies in a finger or base box inflated by
/// `spec.collision_margin`.
pub fn check_collision(cloud: &PointCloud, spec: &GripperSpec, pose: &GraspPose) -> bool {
    let frame = GripperFrame::new(spec, pose);
    cloud
        .points()
        .iter()
        .any(|p| frame.collides(&frame.to_local(p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn pose(width: f64) -> GraspPose {
        GraspPose::new(Vec3::zeros(), UnitQuaternion::identity(), width)
    }

    #[test]
    fn default_spec_is_valid() {
        GripperSpec::default().validate().unwrap();
        let bad = GripperSpec {
            finger_length: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(GripperError::NonPositive { .. })));
    }

    #[test]
    fn finger_layout_at_identity() {
        let spec = GripperSpec::default();
        let [left, right, base] = gripper_boxes(&spec, &pose(0.08));
        assert!((left.center.x + (0.04 + 0.005)).abs() < 1e-15);
        assert!((right.center.x - (0.04 + 0.005)).abs() < 1e-15);
        assert_eq!(left.center.z, -0.025);
        assert!((base.center.z + 0.06).abs() < 1e-15);
        assert!((base.half_extents.x - 0.05).abs() < 1e-15);
    }

    #[test]
    fn closed_jaw_fingers_touch() {
        let spec = GripperSpec::default();
        let [left, right, _] = gripper_boxes(&spec, &pose(0.0));
        assert_eq!(left.center.x + left.half_extents.x, 0.0);
        assert_eq!(right.center.x - right.half_extents.x, 0.0);
    }

    #[test]
    fn boxes_rotate_with_pose() {
        let spec = GripperSpec::default();
        let q = UnitQuaternion::from_euler_angles(0.3, -1.1, 2.0);
        let base = gripper_boxes(&spec, &pose(0.05));
        let rotated = gripper_boxes(&spec, &GraspPose::new(Vec3::zeros(), q, 0.05));
        for (a, b) in base.iter().zip(&rotated) {
            assert!((q * a.center - b.center).norm() < 1e-15);
            assert!(b.rotation.angle_to(&(q * a.rotation)) < 1e-12);
        }
    }

    #[test]
    fn obb_membership() {
        let b = OrientedBox {
            center: Vec3::new(1.0, 2.0, 3.0),
            half_extents: Vec3::new(0.1, 0.2, 0.3),
            rotation: UnitQuaternion::from_axis_angle(&Vec3::z_axis(), 0.7),
        };
        assert!(point_in_obb(&b.center, &b, 0.0));
        let far = b.center + b.rotation * Vec3::new(0.2, 0.0, 0.0);
        assert!(!point_in_obb(&far, &b, 0.0));
        assert!(point_in_obb(&far, &b, 0.11));
    }

    #[test]
    fn center_is_between_fingers() {
        let spec = GripperSpec::default();
        let p = pose(0.04);
        let c = PointCloud::new(vec![p.center]).unwrap();
        assert_eq!(points_between_fingers(&c, &spec, &p), vec![0]);
        let eps = 1e-9;
        let side = PointCloud::new(vec![Vec3::new(0.02 + eps, 0.0, -0.01)]).unwrap();
        assert!(points_between_fingers(&side, &spec, &p).is_empty());
    }

    #[test]
    fn collision_cases() {
        let spec = GripperSpec::default();
        let p = pose(0.04);
        let clear = PointCloud::new(vec![Vec3::new(0.0, 0.0, -0.02), Vec3::new(0.0, 0.0, 0.1)]).unwrap();
        assert!(!check_collision(&clear, &spec, &p));
        let [left, _, base] = gripper_boxes(&spec, &p);
        assert!(check_collision(&PointCloud::new(vec![left.center]).unwrap(), &spec, &p));
        assert!(check_collision(&PointCloud::new(vec![base.center]).unwrap(), &spec, &p));
    }

    #[test]
    fn axes_follow_rotation() {
        let q = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), FRAC_PI_2);
        let p = GraspPose::new(Vec3::zeros(), q, 0.01);
        assert!((p.approach_axis() - Vec3::x()).norm() < 1e-15);
        assert!((p.closing_axis() + Vec3::z()).norm() < 1e-15);
    }

    #[test]
    fn pose_validation() {
        let spec = GripperSpec::default();
        assert!(pose(0.09).validate(&spec).is_err());
        assert!(pose(-0.01).validate(&spec).is_err());
        pose(0.0).validate(&spec).unwrap();
        assert!(unit_quaternion(Quaternion::new(0.5, 0.0, 0.0, 0.0)).is_err());
    }
}
