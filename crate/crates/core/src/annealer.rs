//! Simulated-annealing grasp search around a fixed grasp center.
//!
//! Only orientation and opening width move. Each step proposes an
//! axis-angle perturbation whose scale shrinks with temperature, scores it
//! with [`crate::fitness`], and applies Metropolis acceptance under a linear
//! cooling schedule. A non-colliding state never moves to a colliding one,
//! and the approach axis is kept within 90° of the direction it was
//! initialized in.

use std::f64::consts::TAU;

use log::warn;
use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::fitness::{evaluate_with_centroid, FitnessBreakdown, FitnessError, FitnessWeights};
use crate::gripper::{GraspPose, GripperSpec};
use crate::pointcloud::{PointCloud, Vec3};

/// Resample budget for proposals that leave the rotation bounds.
pub const MAX_BOUND_RETRIES: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum AnnealError {
    #[error("{MAX_BOUND_RETRIES} proposals in a row violated the rotation bounds")]
    BoundsExhausted,
    #[error("center index {index} out of range for {len} points")]
    BadCenter { index: usize, len: usize },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub t_initial: f64,
    pub iterations: usize,
    /// Standard deviation of the rotation step at full temperature, radians.
    pub sigma_rot_max: f64,
    /// Standard deviation of the width step, meters.
    pub sigma_width: f64,
    pub seed: u64,
}

impl Default for AnnealSchedule {
    fn default() -> Self {
        Self {
            t_initial: 0.1,
            iterations: 1000,
            sigma_rot_max: 1.0,
            sigma_width: 0.01,
            seed: 0,
        }
    }
}

impl AnnealSchedule {
    pub const KEYS: [&'static str; 5] = [
        "t_initial",
        "iterations",
        "sigma_rot_max",
        "sigma_width",
        "seed",
    ];

    pub fn validate(&self) -> Result<(), AnnealError> {
        if !(self.t_initial > 0.0 && self.t_initial.is_finite()) {
            return Err(AnnealError::InvalidSchedule("t_initial must be positive".into()));
        }
        if self.iterations == 0 {
            return Err(AnnealError::InvalidSchedule("iterations must be >= 1".into()));
        }
        if !(self.sigma_rot_max >= 0.0 && self.sigma_width >= 0.0) {
            return Err(AnnealError::InvalidSchedule("step sizes must be >= 0".into()));
        }
        Ok(())
    }

    /// Temperature at step `t`: `t_initial * (1 - t / iterations)`.
    pub fn temperature(&self, step: usize) -> f64 {
        self.t_initial * (1.0 - step as f64 / self.iterations as f64)
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut s = Self::default();
        cfg.read_into("t_initial", &mut s.t_initial)?;
        cfg.read_into("iterations", &mut s.iterations)?;
        cfg.read_into("sigma_rot_max", &mut s.sigma_rot_max)?;
        cfg.read_into("sigma_width", &mut s.sigma_width)?;
        cfg.read_into("seed", &mut s.seed)?;
        s.validate().map_err(|e| ConfigError::Invalid {
            key: "schedule".into(),
            reason: e.to_string(),
        })?;
        Ok(s)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("t_initial", self.t_initial);
        cfg.set("iterations", self.iterations);
        cfg.set("sigma_rot_max", self.sigma_rot_max);
        cfg.set("sigma_width", self.sigma_width);
        cfg.set("seed", self.seed);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredGrasp {
    pub pose: GraspPose,
    pub breakdown: FitnessBreakdown,
    pub center_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApproachFamily {
    /// Approaching along world -z.
    TopDown,
    /// Approaching horizontally towards the cloud centroid.
    Side,
}

/// Starting pose plus the direction its approach axis must stay near.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialPose {
    pub pose: GraspPose,
    pub family: ApproachFamily,
    pub family_axis: Vec3,
}

/// Rotation whose local +z is `approach`, rolled by `roll` about it.
pub fn frame_from_approach(approach: &Vec3, roll: f64) -> UnitQuaternion<f64> {
    let z = approach.normalize();
    let reference = if z.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let x0 = reference.cross(&z).normalize();
    let y0 = z.cross(&x0);
    let x = x0 * roll.cos() + y0 * roll.sin();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m))
}

/// Random top-down or side pose at `center_index`, fully open.
pub fn init_pose<R: Rng + ?Sized>(
    cloud: &PointCloud,
    center_index: usize,
    spec: &GripperSpec,
    rng: &mut R,
) -> InitialPose {
    let center = cloud.point(center_index);
    let top_down = rng.random_bool(0.5);
    let roll = rng.random_range(0.0..TAU);
    let (family, axis) = if top_down {
        (ApproachFamily::TopDown, -Vec3::z())
    } else {
        let to_centroid = cloud.centroid() - center;
        let horizontal = Vec3::new(to_centroid.x, to_centroid.y, 0.0);
        let dir = if horizontal.norm() > 1e-12 {
            horizontal.normalize()
        } else {
            let a = rng.random_range(0.0..TAU);
            Vec3::new(a.cos(), a.sin(), 0.0)
        };
        (ApproachFamily::Side, dir)
    };
    InitialPose {
        pose: GraspPose::new(center, frame_from_approach(&axis, roll), spec.max_width),
        family,
        family_axis: axis,
    }
}

/// True when the approach axis lies within 90° of `family_axis`.
pub fn within_bounds(pose: &GraspPose, family_axis: &Vec3) -> bool {
    pose.approach_axis().dot(family_axis) >= 0.0
}

/// Perturbs orientation and width; the center never moves.
pub fn propose<R: Rng + ?Sized>(
    pose: &GraspPose,
    temperature_fraction: f64,
    family_axis: &Vec3,
    schedule: &AnnealSchedule,
    spec: &GripperSpec,
    rng: &mut R,
) -> Result<GraspPose, AnnealError> {
    let angle_dist = Normal::new(0.0, schedule.sigma_rot_max * temperature_fraction)
        .map_err(|e| AnnealError::InvalidSchedule(e.to_string()))?;
    let width_dist = Normal::new(0.0, schedule.sigma_width)
        .map_err(|e| AnnealError::InvalidSchedule(e.to_string()))?;
    for _ in 0..MAX_BOUND_RETRIES {
        let axis = random_axis(rng);
        let angle: f64 = angle_dist.sample(rng).abs();
        let rotation = if angle > 0.0 {
            let step = UnitQuaternion::from_axis_angle(&axis, angle);
            UnitQuaternion::new_normalize((step * pose.rotation).into_inner())
        } else {
            pose.rotation
        };
        let width = (pose.width + width_dist.sample(rng)).clamp(0.0, spec.max_width);
        let candidate = GraspPose::new(pose.center, rotation, width);
        if within_bounds(&candidate, family_axis) {
            return Ok(candidate);
        }
    }
    Err(AnnealError::BoundsExhausted)
}

fn random_axis<R: Rng + ?Sized>(rng: &mut R) -> Unit<Vec3> {
    loop {
        let v = Vec3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        if let Some(axis) = Unit::try_new(v, 1e-12) {
            return axis;
        }
    }
}

/// Metropolis acceptance with the collision-transition ban.
pub fn accept<R: Rng + ?Sized>(
    score_new: f64,
    score_cur: f64,
    collided_new: bool,
    collided_cur: bool,
    temperature: f64,
    rng: &mut R,
) -> bool {
    if !collided_cur && collided_new {
        return false;
    }
    if score_new > score_cur {
        return true;
    }
    if temperature <= 0.0 {
        return false;
    }
    let p = (-(score_cur - score_new) / temperature).exp();
    rng.random::<f64>() < p
}

/// Per-run bookkeeping for audits of the search.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnealTrace {
    pub temperatures: Vec<f64>,
    pub accepted: usize,
    pub accepted_worse: usize,
    /// Accepted moves from a non-colliding to a colliding state.
    pub accepted_into_collision: usize,
    pub skipped: usize,
    pub initial: Option<ScoredGrasp>,
    pub last: Option<ScoredGrasp>,
}

pub fn optimize_grasp(
    cloud: &PointCloud,
    center_index: usize,
    spec: &GripperSpec,
    weights: &FitnessWeights,
    schedule: &AnnealSchedule,
) -> Result<ScoredGrasp, AnnealError> {
    optimize_grasp_traced(cloud, center_index, spec, weights, schedule).map(|(best, _)| best)
}

/// Runs the search and returns the best state visited together with its
/// trace. Deterministic in `schedule.seed`.
pub fn optimize_grasp_traced(
    cloud: &PointCloud,
    center_index: usize,
    spec: &GripperSpec,
    weights: &FitnessWeights,
    schedule: &AnnealSchedule,
) -> Result<(ScoredGrasp, AnnealTrace), AnnealError> {
    schedule.validate()?;
    if center_index >= cloud.len() {
        return Err(AnnealError::BadCenter {
            index: center_index,
            len: cloud.len(),
        });
    }
    let normals = cloud.normals().ok_or(FitnessError::MissingNormals)?;
    let centroid = cloud.centroid();
    let score = |pose: &GraspPose| ScoredGrasp {
        pose: *pose,
        breakdown: evaluate_with_centroid(cloud, normals, &centroid, spec, pose, weights),
        center_index,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let init = init_pose(cloud, center_index, spec, &mut rng);
    let mut current = score(&init.pose);
    let mut best = current;
    let mut trace = AnnealTrace {
        temperatures: Vec::with_capacity(schedule.iterations),
        initial: Some(current),
        ..Default::default()
    };

    for step in 0..schedule.iterations {
        let temperature = schedule.temperature(step);
        trace.temperatures.push(temperature);
        let fraction = temperature / schedule.t_initial;
        let pose = match propose(&current.pose, fraction, &init.family_axis, schedule, spec, &mut rng) {
            Ok(p) => p,
            Err(e) => {
                warn!("annealer step {step} skipped: {e}");
                trace.skipped += 1;
                continue;
            }
        };
        let candidate = score(&pose);
        if accept(
            candidate.breakdown.score,
            current.breakdown.score,
            candidate.breakdown.collided,
            current.breakdown.collided,
            temperature,
            &mut rng,
        ) {
            trace.accepted += 1;
            if candidate.breakdown.score <= current.breakdown.score {
                trace.accepted_worse += 1;
            }
            if candidate.breakdown.collided && !current.breakdown.collided {
                trace.accepted_into_collision += 1;
            }
            current = candidate;
            if current.breakdown.score > best.breakdown.score {
                best = current;
            }
        }
    }
    trace.last = Some(current);
    Ok((best, trace))
}
