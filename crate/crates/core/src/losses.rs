//! Training loss stack: capsule margin loss, point-set reconstruction loss
//! and the per-point grasp loss, plus analytic gradients with respect to
//! every prediction field.

use nalgebra::Quaternion;
use thiserror::Error;

use crate::capsnet::{classify_norms, NetworkOutput};
use crate::gripper::UNIT_TOLERANCE;
use crate::pointcloud::Vec3;

/// Distance to a non-differentiable point below which a configuration is
/// reported as near a kink.
pub const KINK_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("quaternion norm {0} is not within 1e-6 of 1")]
    NonUnitQuaternion(f64),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginParams {
    pub lambda: f64,
    pub m_plus: f64,
    pub m_minus: f64,
}

impl Default for MarginParams {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            m_plus: 0.9,
            m_minus: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspLossParams {
    /// Weight of the width error.
    pub alpha: f64,
}

impl Default for GraspLossParams {
    fn default() -> Self {
        Self { alpha: 0.001 }
    }
}

/// How the predicted quality enters the quality error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QualityMode {
    /// Linear head output used as-is.
    #[default]
    Raw,
    /// Prediction clamped to `[0, 1]` first.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLossParams {
    /// Reconstruction weight.
    pub beta: f64,
    pub margin: MarginParams,
    pub grasp: GraspLossParams,
    pub quality_mode: QualityMode,
    /// Gripper-local axis of the symmetric half-turn (the approach axis).
    pub wrist_axis: Vec3,
}

impl Default for TotalLossParams {
    fn default() -> Self {
        Self {
            beta: 0.0005,
            margin: MarginParams::default(),
            grasp: GraspLossParams::default(),
            quality_mode: QualityMode::Raw,
            wrist_axis: Vec3::z(),
        }
    }
}

/// Ground truth for one point's grasp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspTarget {
    pub quality: f64,
    pub rotation: Quaternion<f64>,
    pub width: f64,
    /// Whether the capsule producing the prediction belongs to the object.
    pub present: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspPrediction {
    pub quality: f64,
    pub rotation: Quaternion<f64>,
    pub width: f64,
}

/// Per-point grasp ground truth without the presence flag, which
/// [`total_loss`] derives from the winning capsule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointGraspTarget {
    pub quality: f64,
    pub rotation: Quaternion<f64>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTarget {
    pub cloud: Vec<Vec3>,
    pub label: usize,
    pub grasps: Vec<PointGraspTarget>,
}

/// Terms of the total loss. `reconstruction` already carries the `beta`
/// factor, so `total = margin + reconstruction + grasp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub margin: f64,
    pub reconstruction: f64,
    pub grasp: f64,
    pub total: f64,
}

pub fn margin_loss(v_norm: f64, present: bool, p: &MarginParams) -> f64 {
    if present {
        (p.m_plus - v_norm).max(0.0).powi(2)
    } else {
        p.lambda * (v_norm - p.m_minus).max(0.0).powi(2)
    }
}

fn check_unit(q: &Quaternion<f64>) -> Result<(), LossError> {
    let n = q.norm();
    if !((n - 1.0).abs() <= UNIT_TOLERANCE) {
        return Err(LossError::NonUnitQuaternion(n));
    }
    Ok(())
}

fn qdot(a: &Quaternion<f64>, b: &Quaternion<f64>) -> f64 {
    a.coords.dot(&b.coords)
}

/// `1 - |r · r_hat|`, in `[0, 1]`.
pub fn quat_distance(r: &Quaternion<f64>, r_hat: &Quaternion<f64>) -> Result<f64, LossError> {
    check_unit(r)?;
    check_unit(r_hat)?;
    Ok(1.0 - qdot(r, r_hat).abs().min(1.0))
}

/// `r` followed by a half-turn about the local `wrist_axis`.
pub fn flipped(r: &Quaternion<f64>, wrist_axis: &Vec3) -> Quaternion<f64> {
    let a = wrist_axis.normalize();
    r * Quaternion::new(0.0, a.x, a.y, a.z)
}

/// Symmetric rotation loss: the smaller distance to `r` or to `r` turned
/// half way around the wrist axis.
pub fn rotation_loss(
    r: &Quaternion<f64>,
    r_hat: &Quaternion<f64>,
    wrist_axis: &Vec3,
) -> Result<f64, LossError> {
    let direct = quat_distance(r, r_hat)?;
    let turned = quat_distance(&flipped(r, wrist_axis), r_hat)?;
    Ok(direct.min(turned))
}

fn effective_quality(q_hat: f64, mode: QualityMode) -> f64 {
    match mode {
        QualityMode::Raw => q_hat,
        QualityMode::Clamped => q_hat.clamp(0.0, 1.0),
    }
}

pub fn grasp_loss(
    pred: &GraspPrediction,
    target: &GraspTarget,
    params: &GraspLossParams,
    wrist_axis: &Vec3,
) -> Result<f64, LossError> {
    grasp_loss_with_mode(pred, target, params, wrist_axis, QualityMode::Raw)
}

fn grasp_loss_with_mode(
    pred: &GraspPrediction,
    target: &GraspTarget,
    params: &GraspLossParams,
    wrist_axis: &Vec3,
    mode: QualityMode,
) -> Result<f64, LossError> {
    let rot = rotation_loss(&target.rotation, &pred.rotation, wrist_axis)?;
    if !target.present {
        return Ok(0.0);
    }
    let q_hat = effective_quality(pred.quality, mode);
    let quality = (target.quality - q_hat).powi(2);
    let width = (target.width - pred.width).powi(2);
    Ok(quality + target.quality * (rot + params.alpha * width))
}

/// Mean over points and coordinates of the squared index-paired difference.
pub fn reconstruction_loss(input: &[Vec3], recon: &[Vec3]) -> Result<f64, LossError> {
    if input.len() != recon.len() {
        return Err(LossError::LengthMismatch {
            left: input.len(),
            right: recon.len(),
        });
    }
    if input.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = input
        .iter()
        .zip(recon)
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(sum / (3 * input.len()) as f64)
}

fn check_shapes(output: &NetworkOutput, target: &LossTarget) -> Result<(), LossError> {
    let n = target.cloud.len();
    let lens = [
        ("reconstruction", output.reconstruction.len()),
        ("rotations", output.rotations.len()),
        ("quality", output.quality.len()),
        ("width", output.width.len()),
        ("grasp targets", target.grasps.len()),
    ];
    for (name, len) in lens {
        if len != n {
            return Err(LossError::ShapeMismatch(format!(
                "{name} has {len} rows, cloud has {n}"
            )));
        }
    }
    if n == 0 {
        return Err(LossError::ShapeMismatch("empty point set".into()));
    }
    if target.label >= output.capsule_norms.len() {
        return Err(LossError::ShapeMismatch(format!(
            "label {} but only {} capsules",
            target.label,
            output.capsule_norms.len()
        )));
    }
    Ok(())
}

/// Margin loss summed over capsules, `beta`-weighted reconstruction loss and
/// the grasp loss averaged over points. The grasp heads belong to the
/// winning capsule, so the grasp term is active only when the winner is the
/// labelled class.
pub fn total_loss(
    output: &NetworkOutput,
    target: &LossTarget,
    params: &TotalLossParams,
) -> Result<LossBreakdown, LossError> {
    check_shapes(output, target)?;
    let margin: f64 = output
        .capsule_norms
        .iter()
        .enumerate()
        .map(|(c, &v)| margin_loss(v, c == target.label, &params.margin))
        .sum();
    let reconstruction = params.beta * reconstruction_loss(&target.cloud, &output.reconstruction)?;
    let (winner, _) = classify_norms(&output.capsule_norms);
    let present = winner == target.label;
    let mut grasp_sum = 0.0;
    for i in 0..target.cloud.len() {
        let t = &target.grasps[i];
        grasp_sum += grasp_loss_with_mode(
            &GraspPrediction {
                quality: output.quality[i],
                rotation: output.rotations[i],
                width: output.width[i],
            },
            &GraspTarget {
                quality: t.quality,
                rotation: t.rotation,
                width: t.width,
                present,
            },
            &params.grasp,
            &params.wrist_axis,
            params.quality_mode,
        )?;
    }
    let grasp = grasp_sum / target.cloud.len() as f64;
    Ok(LossBreakdown {
        margin,
        reconstruction,
        grasp,
        total: margin + reconstruction + grasp,
    })
}

/// Gradients of the total loss with respect to every prediction field.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub capsule_norms: Vec<f64>,
    pub reconstruction: Vec<Vec3>,
    /// Projected onto the tangent space of the unit sphere at each row.
    pub rotations: Vec<Quaternion<f64>>,
    pub quality: Vec<f64>,
    pub width: Vec<f64>,
    /// Smallest distance from any active non-differentiable point.
    pub kink_distance: f64,
    /// `kink_distance < KINK_TOLERANCE`.
    pub near_non_smooth: bool,
}

impl LossGradients {
    /// Every gradient entry in a fixed order: norms, reconstruction,
    /// rotations, quality, width.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.capsule_norms.clone();
        out.extend(self.reconstruction.iter().flat_map(|v| [v.x, v.y, v.z]));
        out.extend(
            self.rotations
                .iter()
                .flat_map(|q| [q.w, q.i, q.j, q.k]),
        );
        out.extend(&self.quality);
        out.extend(&self.width);
        out
    }
}

pub fn loss_gradients(
    output: &NetworkOutput,
    target: &LossTarget,
    params: &TotalLossParams,
) -> Result<LossGradients, LossError> {
    check_shapes(output, target)?;
    let n = target.cloud.len();
    let inv_n = 1.0 / n as f64;
    let mp = &params.margin;
    let mut kink = f64::INFINITY;

    let capsule_norms = output
        .capsule_norms
        .iter()
        .enumerate()
        .map(|(c, &v)| {
            if c == target.label {
                kink = kink.min((v - mp.m_plus).abs());
                if v < mp.m_plus {
                    -2.0 * (mp.m_plus - v)
                } else {
                    0.0
                }
            } else {
                kink = kink.min((v - mp.m_minus).abs());
                if v > mp.m_minus {
                    2.0 * mp.lambda * (v - mp.m_minus)
                } else {
                    0.0
                }
            }
        })
        .collect();

    let recon_scale = params.beta * 2.0 / (3 * n) as f64;
    let reconstruction = output
        .reconstruction
        .iter()
        .zip(&target.cloud)
        .map(|(p_hat, p)| (p_hat - p) * recon_scale)
        .collect();

    let (winner, ranked) = classify_norms(&output.capsule_norms);
    if ranked.len() > 1 {
        kink = kink.min(ranked[0].1 - ranked[1].1);
    }
    let present = winner == target.label;

    let mut rotations = vec![Quaternion::new(0.0, 0.0, 0.0, 0.0); n];
    let mut quality = vec![0.0; n];
    let mut width = vec![0.0; n];
    for i in 0..n {
        let t = &target.grasps[i];
        let r_hat = output.rotations[i];
        check_unit(&t.rotation)?;
        check_unit(&r_hat)?;
        if !present {
            continue;
        }
        let q_raw = output.quality[i];
        let q_hat = effective_quality(q_raw, params.quality_mode);
        let dq = match params.quality_mode {
            QualityMode::Raw => 1.0,
            QualityMode::Clamped => {
                kink = kink.min(q_raw.abs()).min((q_raw - 1.0).abs());
                if q_raw > 0.0 && q_raw < 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        quality[i] = inv_n * 2.0 * (q_hat - t.quality) * dq;
        width[i] = inv_n * t.quality * params.grasp.alpha * 2.0 * (output.width[i] - t.width);

        if t.quality != 0.0 {
            let turned = flipped(&t.rotation, &params.wrist_axis);
            let d_direct = qdot(&t.rotation, &r_hat);
            let d_turned = qdot(&turned, &r_hat);
            let (active, dot) = if 1.0 - d_direct.abs() <= 1.0 - d_turned.abs() {
                (t.rotation, d_direct)
            } else {
                (turned, d_turned)
            };
            kink = kink
                .min((d_direct.abs() - d_turned.abs()).abs())
                .min(dot.abs());
            // d(1 - |a·r|)/dr = -sign(a·r) a, then drop the radial part
            let g = active * (-dot.signum() * t.quality * inv_n);
            let radial = qdot(&g, &r_hat);
            rotations[i] = g - r_hat * radial;
        }
    }

    Ok(LossGradients {
        capsule_norms,
        reconstruction,
        rotations,
        quality,
        width,
        kink_distance: kink,
        near_non_smooth: kink < KINK_TOLERANCE,
    })
}
