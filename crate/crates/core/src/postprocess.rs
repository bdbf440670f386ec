//! Inference-side helpers: Gaussian smoothing of the per-point quality
//! field over the k-NN graph, best-grasp selection and permutation voting.

use std::fmt::Write as _;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::capsnet::{forward, CapsNetConfig, CapsNetError, CapsNetWeights, NetworkOutput};
use crate::gripper::GraspPose;
use crate::pointcloud::{knn_graph, sample_subset_indices, PointCloud, PointCloudError};

pub const DEFAULT_SMOOTH_K: usize = 16;
pub const DEFAULT_SMOOTH_SIGMA: f64 = 0.05;
pub const DEFAULT_VOTES: usize = 5;
pub const DEFAULT_MAX_ROUNDS: usize = 10;

#[derive(Debug, Error)]
pub enum PostprocessError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("value {index} is not finite")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("empty vote")]
    EmptyVote,
    #[error("no consensus after {rounds} rounds")]
    NoConsensus { rounds: usize },
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    CapsNet(#[from] CapsNetError),
}

/// One scalar per point of `cloud`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessField<'a> {
    cloud: &'a PointCloud,
    values: Vec<f64>,
}

impl<'a> FitnessField<'a> {
    pub fn new(cloud: &'a PointCloud, values: Vec<f64>) -> Result<Self, PostprocessError> {
        if values.len() != cloud.len() {
            return Err(PostprocessError::ShapeMismatch(format!(
                "{} values for {} points",
                values.len(),
                cloud.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(PostprocessError::NonFinite { index });
        }
        Ok(Self { cloud, values })
    }

    pub fn cloud(&self) -> &'a PointCloud {
        self.cloud
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One `x y z value` line per point.
    pub fn to_ascii(&self) -> String {
        let mut s = String::new();
        for (p, v) in self.cloud.points().iter().zip(&self.values) {
            let _ = writeln!(s, "{} {} {} {}", p.x, p.y, p.z, v);
        }
        s
    }
}

/// Each value becomes the Gaussian-weighted mean of itself and its `k`
/// nearest neighbors, `w_ij = exp(-|x_i - x_j|^2 / (2 sigma^2))`.
pub fn smooth_fitness<'a>(
    field: &FitnessField<'a>,
    sigma: f64,
    k: usize,
) -> Result<FitnessField<'a>, PostprocessError> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(PostprocessError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let cloud = field.cloud;
    let graph = knn_graph(cloud, k)?;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let values = graph
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let xi = cloud.point(i);
            let mut num = field.values[i];
            let mut den = 1.0;
            for &j in nbrs {
                let w = (-(cloud.point(j) - xi).norm_squared() * inv).exp();
                num += w * field.values[j];
                den += w;
            }
            let lo = field.values[i].min(nbrs.iter().map(|&j| field.values[j]).fold(f64::INFINITY, f64::min));
            let hi = field.values[i].max(nbrs.iter().map(|&j| field.values[j]).fold(f64::NEG_INFINITY, f64::max));
            // rounding can push the quotient one ulp past the inputs
            (num / den).clamp(lo, hi)
        })
        .collect();
    Ok(FitnessField { cloud, values })
}

/// Point with the highest smoothed value (first one on ties) and the grasp
/// predicted there, centered on the point.
pub fn select_grasp(
    output: &NetworkOutput,
    smoothed: &FitnessField,
) -> Result<(usize, GraspPose), PostprocessError> {
    let n = smoothed.values.len();
    if output.rotations.len() != n || output.width.len() != n {
        return Err(PostprocessError::ShapeMismatch(format!(
            "network rows {} / {} for {n} points",
            output.rotations.len(),
            output.width.len()
        )));
    }
    if n == 0 {
        return Err(PostprocessError::ShapeMismatch("empty field".into()));
    }
    let mut best = 0;
    for (i, v) in smoothed.values.iter().enumerate() {
        if *v > smoothed.values[best] {
            best = i;
        }
    }
    let pose = GraspPose::new(
        smoothed.cloud.point(best),
        UnitQuaternion::new_unchecked(output.rotations[best]),
        output.width[best],
    );
    Ok((best, pose))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Winner(usize),
    /// Two or more categories share the top count.
    NeedsRerun,
}

pub fn majority_vote(predictions: &[usize]) -> Result<Vote, PostprocessError> {
    if predictions.is_empty() {
        return Err(PostprocessError::EmptyVote);
    }
    let max_label = *predictions.iter().max().expect("non-empty");
    let mut counts = vec![0usize; max_label + 1];
    for &p in predictions {
        counts[p] += 1;
    }
    let top = *counts.iter().max().expect("non-empty");
    let mut leaders = counts.iter().enumerate().filter(|(_, &c)| c == top);
    let (first, _) = leaders.next().expect("at least one leader");
    Ok(if leaders.next().is_some() {
        Vote::NeedsRerun
    } else {
        Vote::Winner(first)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteParams {
    /// Subsets per round.
    pub votes: usize,
    pub max_rounds: usize,
    pub seed: u64,
}

impl Default for VoteParams {
    fn default() -> Self {
        Self {
            votes: DEFAULT_VOTES,
            max_rounds: DEFAULT_MAX_ROUNDS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteOutcome {
    pub winner: usize,
    /// Rounds used, at least 1.
    pub rounds: usize,
    /// Predictions of every round.
    pub history: Vec<Vec<usize>>,
}

/// Votes over random `subset_size`-point subsets of `cloud`, drawing fresh
/// subsets while the vote is tied. `classify` maps one subset to a category.
pub fn vote_with<F>(
    cloud: &PointCloud,
    subset_size: usize,
    params: &VoteParams,
    mut classify: F,
) -> Result<VoteOutcome, PostprocessError>
where
    F: FnMut(&PointCloud) -> Result<usize, PostprocessError>,
{
    if params.votes == 0 || params.max_rounds == 0 {
        return Err(PostprocessError::InvalidParameter(
            "votes and max_rounds must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut history = Vec::new();
    for round in 1..=params.max_rounds {
        let subsets = sample_subset_indices(cloud.len(), subset_size, params.votes, rng.random())?;
        let preds = subsets
            .iter()
            .map(|idx| classify(&cloud.select(idx)))
            .collect::<Result<Vec<_>, _>>()?;
        let vote = majority_vote(&preds)?;
        history.push(preds);
        if let Vote::Winner(winner) = vote {
            return Ok(VoteOutcome {
                winner,
                rounds: round,
                history,
            });
        }
    }
    Err(PostprocessError::NoConsensus {
        rounds: params.max_rounds,
    })
}

/// [`vote_with`] using the network's winning capsule.
pub fn classify_with_vote(
    cloud: &PointCloud,
    config: &CapsNetConfig,
    weights: &CapsNetWeights,
    params: &VoteParams,
) -> Result<VoteOutcome, PostprocessError> {
    vote_with(cloud, config.num_points, params, |subset| {
        Ok(forward(subset.points(), config, weights)?.winner)
    })
}
