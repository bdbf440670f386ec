//! Five-factor grasp fitness.
//!
//! Factors, each in `[0, 1]`:
//! - `f_enclose`: fraction of cloud points inside the closing region;
//! - `f_clearance`: `2 * min(d_left, d_right) / width`, the smallest gap
//!   between either inner finger face and an enclosed point, relative to the
//!   half opening;
//! - `f_normal`: mean `|n · closing_axis|` over enclosed points;
//! - `f_width`: `1 - width / max_width`;
//! - `f_center`: Gaussian falloff of the distance from the grasp center to
//!   the cloud centroid.
//!
//! The weighted sum is scaled by `collide_scale` when the gripper collides.

use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::gripper::{GraspPose, GripperFrame, GripperSpec};
use crate::pointcloud::PointCloud;

#[derive(Debug, Error, PartialEq)]
pub enum FitnessError {
    #[error("fitness evaluation needs a cloud with normals")]
    MissingNormals,
    #[error("invalid fitness weights: {0}")]
    InvalidWeights(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessWeights {
    pub w_enclose: f64,
    pub w_clearance: f64,
    pub w_normal: f64,
    pub w_width: f64,
    pub w_center: f64,
    /// Multiplier applied to colliding grasps, in `[0, 1)`.
    pub collide_scale: f64,
    /// Length scale of the centering factor, meters.
    pub sigma_center: f64,
}

impl Default for FitnessWeights {
    fn default() -> Self {
        Self {
            w_enclose: 0.30,
            w_clearance: 0.15,
            w_normal: 0.25,
            w_width: 0.10,
            w_center: 0.20,
            collide_scale: 0.10,
            sigma_center: 0.05,
        }
    }
}

impl FitnessWeights {
    pub const KEYS: [&'static str; 7] = [
        "w_enclose",
        "w_clearance",
        "w_normal",
        "w_width",
        "w_center",
        "collide_scale",
        "sigma_center",
    ];

    pub fn validate(&self) -> Result<(), FitnessError> {
        let ws = [
            self.w_enclose,
            self.w_clearance,
            self.w_normal,
            self.w_width,
            self.w_center,
        ];
        if ws.iter().any(|w| !(*w >= 0.0)) {
            return Err(FitnessError::InvalidWeights("weights must be non-negative".into()));
        }
        let sum: f64 = ws.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(FitnessError::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        if !(0.0..1.0).contains(&self.collide_scale) {
            return Err(FitnessError::InvalidWeights(format!(
                "collide_scale {} outside [0, 1)",
                self.collide_scale
            )));
        }
        if !(self.sigma_center > 0.0) {
            return Err(FitnessError::InvalidWeights("sigma_center must be positive".into()));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut w = Self::default();
        cfg.read_into("w_enclose", &mut w.w_enclose)?;
        cfg.read_into("w_clearance", &mut w.w_clearance)?;
        cfg.read_into("w_normal", &mut w.w_normal)?;
        cfg.read_into("w_width", &mut w.w_width)?;
        cfg.read_into("w_center", &mut w.w_center)?;
        cfg.read_into("collide_scale", &mut w.collide_scale)?;
        cfg.read_into("sigma_center", &mut w.sigma_center)?;
        w.validate().map_err(|e| ConfigError::Invalid {
            key: "fitness".into(),
            reason: e.to_string(),
        })?;
        Ok(w)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("w_enclose", self.w_enclose);
        cfg.set("w_clearance", self.w_clearance);
        cfg.set("w_normal", self.w_normal);
        cfg.set("w_width", self.w_width);
        cfg.set("w_center", self.w_center);
        cfg.set("collide_scale", self.collide_scale);
        cfg.set("sigma_center", self.sigma_center);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitnessBreakdown {
    pub f_enclose: f64,
    pub f_clearance: f64,
    pub f_normal: f64,
    pub f_width: f64,
    pub f_center: f64,
    pub collided: bool,
    pub score: f64,
}

impl FitnessBreakdown {
    /// Weighted factor sum before any collision penalty.
    pub fn raw_score(&self, w: &FitnessWeights) -> f64 {
        w.w_enclose * self.f_enclose
            + w.w_clearance * self.f_clearance
            + w.w_normal * self.f_normal
            + w.w_width * self.f_width
            + w.w_center * self.f_center
    }
}

/// Scores `pose` against `cloud`, which must carry normals.
pub fn evaluate(
    cloud: &PointCloud,
    spec: &GripperSpec,
    pose: &GraspPose,
    weights: &FitnessWeights,
) -> Result<FitnessBreakdown, FitnessError> {
    let normals = cloud.normals().ok_or(FitnessError::MissingNormals)?;
    Ok(evaluate_with_centroid(cloud, normals, &cloud.centroid(), spec, pose, weights))
}

/// Same as [`evaluate`] with a precomputed centroid, for inner loops.
pub(crate) fn evaluate_with_centroid(
    cloud: &PointCloud,
    normals: &[crate::pointcloud::Vec3],
    centroid: &crate::pointcloud::Vec3,
    spec: &GripperSpec,
    pose: &GraspPose,
    weights: &FitnessWeights,
) -> FitnessBreakdown {
    let frame = GripperFrame::new(spec, pose);
    let closing = pose.closing_axis();
    let half_w = frame.half_width();

    let mut between = 0usize;
    let mut d_left = f64::INFINITY;
    let mut d_right = f64::INFINITY;
    let mut normal_sum = 0.0;
    let mut collided = false;
    for (p, n) in cloud.points().iter().zip(normals) {
        let local = frame.to_local(p);
        if frame.in_gap(&local) {
            between += 1;
            d_left = d_left.min(local.x + half_w);
            d_right = d_right.min(half_w - local.x);
            normal_sum += n.dot(&closing).abs();
        }
        if !collided && frame.collides(&local) {
            collided = true;
        }
    }

    let f_enclose = between as f64 / cloud.len() as f64;
    let (f_clearance, f_normal) = if between == 0 {
        (0.0, 0.0)
    } else {
        let clearance = if pose.width > 0.0 {
            (2.0 * d_left.min(d_right) / pose.width).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (clearance, (normal_sum / between as f64).min(1.0))
    };
    let f_width = (1.0 - pose.width / spec.max_width).clamp(0.0, 1.0);
    let d2 = (pose.center - centroid).norm_squared();
    let f_center = (-d2 / (2.0 * weights.sigma_center * weights.sigma_center)).exp();

    let mut out = FitnessBreakdown {
        f_enclose,
        f_clearance,
        f_normal,
        f_width,
        f_center,
        collided,
        score: 0.0,
    };
    let raw = out.raw_score(weights);
    out.score = if collided {
        weights.collide_scale * raw
    } else {
        raw
    };
    out
}
