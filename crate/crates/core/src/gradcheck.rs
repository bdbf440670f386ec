//! Central finite-difference check of [`loss_gradients`] on random inputs.
//!
//! The numeric side only ever calls [`total_loss`]; rotation rows are
//! perturbed in R^4 and re-normalized before evaluation, which yields the
//! tangent-space gradient the analytic side reports.

use nalgebra::Quaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::capsnet::{classify_norms, NetworkOutput};
use crate::losses::{
    loss_gradients, total_loss, LossError, LossTarget, PointGraspTarget, TotalLossParams,
    KINK_TOLERANCE,
};
use crate::pointcloud::Vec3;

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Magnitude below which relative error turns into absolute error.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LossCase {
    pub output: NetworkOutput,
    pub target: LossTarget,
}

pub fn random_unit_quaternion<R: Rng + ?Sized>(rng: &mut R) -> Quaternion<f64> {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let q = Quaternion::new(v[0], v[1], v[2], v[3]);
        let n = q.norm();
        if n > 1e-3 {
            return q / n;
        }
    }
}

/// Random prediction/target pair. Half of the cases label the winning
/// capsule so that the grasp term is active.
pub fn random_case(seed: u64, points: usize, capsules: usize) -> LossCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capsule_norms: Vec<f64> = (0..capsules).map(|_| rng.random::<f64>()).collect();
    let (winner, _) = classify_norms(&capsule_norms);
    let label = if rng.random_bool(0.5) {
        winner
    } else {
        rng.random_range(0..capsules)
    };
    let noise = Normal::new(0.0, 0.05).expect("valid sigma");
    let cloud: Vec<Vec3> = (0..points)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.0)))
        .collect();
    let reconstruction = cloud
        .iter()
        .map(|p| p + Vec3::from_fn(|_, _| noise.sample(&mut rng)))
        .collect();
    let rotations = (0..points).map(|_| random_unit_quaternion(&mut rng)).collect();
    let quality = (0..points).map(|_| rng.random_range(-0.2..1.2)).collect();
    let width = (0..points).map(|_| rng.random_range(0.0..0.08)).collect();
    let grasps = (0..points)
        .map(|_| PointGraspTarget {
            quality: rng.random(),
            rotation: random_unit_quaternion(&mut rng),
            width: rng.random_range(0.0..0.08),
        })
        .collect();
    LossCase {
        output: NetworkOutput {
            capsule_norms,
            winner,
            reconstruction,
            rotations,
            quality,
            width,
        },
        target: LossTarget { cloud, label, grasps },
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Central differences of the total loss, in [`crate::losses::LossGradients::flatten`] order.
pub fn numeric_gradients(case: &LossCase, params: &TotalLossParams, h: f64) -> Result<Vec<f64>, LossError> {
    let eval = |o: &NetworkOutput| total_loss(o, &case.target, params).map(|b| b.total);
    let central = |edit: &dyn Fn(&mut NetworkOutput, f64)| -> Result<f64, LossError> {
        let mut plus = case.output.clone();
        edit(&mut plus, h);
        let mut minus = case.output.clone();
        edit(&mut minus, -h);
        Ok((eval(&plus)? - eval(&minus)?) / (2.0 * h))
    };
    let o = &case.output;
    let mut out = Vec::new();
    for c in 0..o.capsule_norms.len() {
        out.push(central(&|x, d| x.capsule_norms[c] += d)?);
    }
    for i in 0..o.reconstruction.len() {
        for a in 0..3 {
            out.push(central(&|x, d| x.reconstruction[i][a] += d)?);
        }
    }
    for i in 0..o.rotations.len() {
        for a in 0..4 {
            out.push(central(&|x, d| {
                let mut v = x.rotations[i].coords;
                // coords are stored (i, j, k, w); component order here is w, i, j, k
                v[(a + 3) % 4] += d;
                let q = Quaternion::from(v);
                x.rotations[i] = q / q.norm();
            })?);
        }
    }
    for i in 0..o.quality.len() {
        out.push(central(&|x, d| x.quality[i] += d)?);
    }
    for i in 0..o.width.len() {
        out.push(central(&|x, d| x.width[i] += d)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub configs: usize,
    pub checked: usize,
    /// Configurations too close to a kink for central differences.
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Seed of the configuration with the largest error.
    pub worst_seed: Option<u64>,
}

impl GradCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tolerance
    }
}

/// Checks `configs` random cases with seeds `seed, seed + 1, ...`. Cases
/// whose distance to a kink is below `max(KINK_TOLERANCE, 10 h)` are skipped,
/// since the difference stencil would straddle it.
pub fn check_gradients(
    configs: usize,
    seed: u64,
    points: usize,
    params: &TotalLossParams,
    h: f64,
) -> Result<GradCheckReport, LossError> {
    let radius = KINK_TOLERANCE.max(10.0 * h);
    let mut report = GradCheckReport {
        configs,
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_seed: None,
    };
    for s in 0..configs as u64 {
        let case_seed = seed.wrapping_add(s);
        let case = random_case(case_seed, points, 8);
        let analytic = loss_gradients(&case.output, &case.target, params)?;
        if analytic.kink_distance < radius {
            report.skipped += 1;
            continue;
        }
        let numeric = numeric_gradients(&case, params, h)?;
        report.checked += 1;
        for (a, n) in analytic.flatten().iter().zip(&numeric) {
            let e = relative_error(*a, *n);
            if e > report.max_rel_error {
                report.max_rel_error = e;
                report.worst_seed = Some(case_seed);
            }
        }
    }
    Ok(report)
}
