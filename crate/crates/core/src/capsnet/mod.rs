//! Forward-only capsule network for point clouds.
//!
//! Pipeline: stacked EdgeConv layers over dynamic k-NN graphs, concatenated
//! and mapped per point to `feature_dim`, global max-pool, a sigmoid layer,
//! primary capsules, routing by agreement into one capsule per category, and
//! four heads fed by the winning capsule (reconstruction, rotation, quality,
//! width).
//!
//! Exact duplicate points are collapsed before feature extraction so that
//! every k-NN graph is built over distinct positions. The pooled feature is
//! then the same for a cloud and the same cloud with repeated points.

mod layers;
mod weights;

use std::collections::HashSet;

use nalgebra::Quaternion;
use thiserror::Error;

use crate::config::{ConfigError, KvConfig};
use crate::pointcloud::Vec3;

pub use layers::{
    edge_conv, feature_knn, leaky_relu, norm, route, sigmoid, squash, Dense, Features, RouteWeights,
    Routing,
};
pub use weights::{CapsNetWeights, Head, TensorInfo, HEAD_NAMES};

#[derive(Debug, Error, PartialEq)]
pub enum CapsNetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need more than {required} distinct points, got {got}")]
    TooFewPoints { required: usize, got: usize },
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("bad weight file: {0}")]
    BadWeights(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapsNetConfig {
    pub num_points: usize,
    pub k_neighbors: usize,
    /// Output channels of each EdgeConv layer; the layer count is the length.
    pub edge_channels: Vec<usize>,
    pub feature_dim: usize,
    /// Width of the sigmoid layer between the pooled feature and the
    /// primary capsules.
    pub fc_dim: usize,
    pub primary_count: usize,
    pub primary_dim: usize,
    /// One capsule per category.
    pub secondary_count: usize,
    pub secondary_dim: usize,
    pub routing_iterations: usize,
    pub head_hidden: [usize; 2],
    pub weights_seed: u64,
    /// Clamp the quality head to `[0, 1]`.
    pub quality_clamp: bool,
    pub leaky_slope: f64,
}

impl Default for CapsNetConfig {
    fn default() -> Self {
        Self {
            num_points: 1024,
            k_neighbors: 20,
            edge_channels: vec![64, 64, 128, 256],
            feature_dim: 1024,
            fc_dim: 256,
            primary_count: 16,
            primary_dim: 4,
            secondary_count: 8,
            secondary_dim: 30,
            routing_iterations: 3,
            head_hidden: [512, 1024],
            weights_seed: 0,
            quality_clamp: false,
            leaky_slope: 0.2,
        }
    }
}

impl CapsNetConfig {
    pub const KEYS: [&'static str; 14] = [
        "num_points",
        "k_neighbors",
        "edge_channels",
        "feature_dim",
        "fc_dim",
        "primary_count",
        "primary_dim",
        "secondary_count",
        "secondary_dim",
        "routing_iterations",
        "head_hidden",
        "weights_seed",
        "quality_clamp",
        "leaky_slope",
    ];

    /// Small extractor and heads with the full capsule layout, for tests and
    /// quick runs.
    pub fn toy(num_points: usize) -> Self {
        Self {
            num_points,
            k_neighbors: 8,
            edge_channels: vec![16, 16, 32],
            feature_dim: 64,
            head_hidden: [32, 64],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), CapsNetError> {
        let counts = [
            ("num_points", self.num_points),
            ("k_neighbors", self.k_neighbors),
            ("feature_dim", self.feature_dim),
            ("fc_dim", self.fc_dim),
            ("primary_count", self.primary_count),
            ("primary_dim", self.primary_dim),
            ("secondary_count", self.secondary_count),
            ("secondary_dim", self.secondary_dim),
            ("routing_iterations", self.routing_iterations),
            ("head_hidden[0]", self.head_hidden[0]),
            ("head_hidden[1]", self.head_hidden[1]),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CapsNetError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.edge_channels.is_empty() || self.edge_channels.contains(&0) {
            return Err(CapsNetError::InvalidConfig(
                "edge_channels must be a non-empty list of positive counts".into(),
            ));
        }
        if self.k_neighbors >= self.num_points {
            return Err(CapsNetError::InvalidConfig(format!(
                "k_neighbors {} must be below num_points {}",
                self.k_neighbors, self.num_points
            )));
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return Err(CapsNetError::InvalidConfig("leaky_slope must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        cfg.read_into("num_points", &mut c.num_points)?;
        cfg.read_into("k_neighbors", &mut c.k_neighbors)?;
        if let Some(v) = cfg.get_list("edge_channels")? {
            c.edge_channels = v;
        }
        cfg.read_into("feature_dim", &mut c.feature_dim)?;
        cfg.read_into("fc_dim", &mut c.fc_dim)?;
        cfg.read_into("primary_count", &mut c.primary_count)?;
        cfg.read_into("primary_dim", &mut c.primary_dim)?;
        cfg.read_into("secondary_count", &mut c.secondary_count)?;
        cfg.read_into("secondary_dim", &mut c.secondary_dim)?;
        cfg.read_into("routing_iterations", &mut c.routing_iterations)?;
        if let Some(v) = cfg.get_list::<usize>("head_hidden")? {
            c.head_hidden = v.try_into().map_err(|_| ConfigError::Invalid {
                key: "head_hidden".into(),
                reason: "expected two comma-separated sizes".into(),
            })?;
        }
        cfg.read_into("weights_seed", &mut c.weights_seed)?;
        cfg.read_into("quality_clamp", &mut c.quality_clamp)?;
        cfg.read_into("leaky_slope", &mut c.leaky_slope)?;
        c.validate().map_err(|e| ConfigError::Invalid {
            key: "capsnet".into(),
            reason: e.to_string(),
        })?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("num_points", self.num_points);
        cfg.set("k_neighbors", self.k_neighbors);
        cfg.set_list("edge_channels", &self.edge_channels);
        cfg.set("feature_dim", self.feature_dim);
        cfg.set("fc_dim", self.fc_dim);
        cfg.set("primary_count", self.primary_count);
        cfg.set("primary_dim", self.primary_dim);
        cfg.set("secondary_count", self.secondary_count);
        cfg.set("secondary_dim", self.secondary_dim);
        cfg.set("routing_iterations", self.routing_iterations);
        cfg.set_list("head_hidden", &self.head_hidden);
        cfg.set("weights_seed", self.weights_seed);
        cfg.set("quality_clamp", self.quality_clamp);
        cfg.set("leaky_slope", self.leaky_slope);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub capsule_norms: Vec<f64>,
    pub winner: usize,
    pub reconstruction: Vec<Vec3>,
    /// Unit quaternions, one per point.
    pub rotations: Vec<Quaternion<f64>>,
    pub quality: Vec<f64>,
    pub width: Vec<f64>,
}

/// Winner index (first maximum) and `(index, norm)` pairs in descending
/// norm order, ties by ascending index.
pub fn classify_norms(norms: &[f64]) -> (usize, Vec<(usize, f64)>) {
    let mut ranked: Vec<(usize, f64)> = norms.iter().cloned().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    (ranked.first().map_or(0, |r| r.0), ranked)
}

/// Per point `i` and each of its `k` nearest neighbors `j`, the edge
/// feature `[x_i, x_j - x_i]`.
pub fn edge_features(cloud: &[Vec3], k: usize) -> Result<Vec<Vec<[f64; 6]>>, CapsNetError> {
    if cloud.len() <= k {
        return Err(CapsNetError::TooFewPoints {
            required: k,
            got: cloud.len(),
        });
    }
    let f = xyz_features(cloud);
    let graph = feature_knn(&f, k);
    Ok(cloud
        .iter()
        .zip(&graph)
        .map(|(xi, nbrs)| {
            nbrs.iter()
                .map(|&j| {
                    let d = cloud[j] - xi;
                    [xi.x, xi.y, xi.z, d.x, d.y, d.z]
                })
                .collect()
        })
        .collect())
}

fn xyz_features(cloud: &[Vec3]) -> Features {
    Features {
        rows: cloud.len(),
        dim: 3,
        data: cloud.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
    }
}

/// Distinct positions in first-occurrence order (`-0.0` equals `0.0`).
fn distinct_points(cloud: &[Vec3]) -> Vec<Vec3> {
    let mut seen = HashSet::with_capacity(cloud.len());
    cloud
        .iter()
        .filter(|p| seen.insert([p.x + 0.0, p.y + 0.0, p.z + 0.0].map(f64::to_bits)))
        .map(|p| p + Vec3::zeros())
        .collect()
}

/// Per-point features of every distinct point after the shared point MLP,
/// before pooling.
pub fn point_features(
    cloud: &[Vec3],
    config: &CapsNetConfig,
    weights: &CapsNetWeights,
) -> Result<Features, CapsNetError> {
    let pts = distinct_points(cloud);
    let k = config.k_neighbors;
    if pts.len() <= k {
        return Err(CapsNetError::TooFewPoints {
            required: k,
            got: pts.len(),
        });
    }
    if weights.edge.len() != config.edge_channels.len() {
        return Err(CapsNetError::ShapeMismatch(
            "weights do not match the EdgeConv layer count".into(),
        ));
    }
    let mut f = xyz_features(&pts);
    let mut layers = Vec::with_capacity(weights.edge.len());
    for layer in &weights.edge {
        let graph = feature_knn(&f, k);
        f = edge_conv(&f, &graph, layer, config.leaky_slope);
        layers.push(f.clone());
    }
    let concat_dim: usize = layers.iter().map(|l| l.dim).sum();
    let mlp = &weights.point_mlp;
    let mut out = Features::new(pts.len(), mlp.outputs);
    let mut row = Vec::with_capacity(concat_dim);
    for i in 0..pts.len() {
        row.clear();
        for l in &layers {
            row.extend_from_slice(l.row(i));
        }
        let dst = out.row_mut(i);
        mlp.apply_into(&row, dst);
        for x in dst.iter_mut() {
            *x = leaky_relu(*x, config.leaky_slope);
        }
    }
    Ok(out)
}

/// Global feature vector: column-wise max of [`point_features`].
pub fn extract_features(
    cloud: &[Vec3],
    config: &CapsNetConfig,
    weights: &CapsNetWeights,
) -> Result<Vec<f64>, CapsNetError> {
    let f = point_features(cloud, config, weights)?;
    let mut pooled = vec![f64::NEG_INFINITY; f.dim];
    for i in 0..f.rows {
        for (p, x) in pooled.iter_mut().zip(f.row(i)) {
            *p = p.max(*x);
        }
    }
    Ok(pooled)
}

/// Primary capsules (squashed) computed from the pooled feature.
pub fn primary_capsules(features: &[f64], config: &CapsNetConfig, weights: &CapsNetWeights) -> Vec<Vec<f64>> {
    let hidden: Vec<f64> = weights.fc.apply(features).into_iter().map(sigmoid).collect();
    let raw = weights.primary.apply(&hidden);
    raw.chunks(config.primary_dim).map(squash).collect()
}

fn run_head(head: &Head, input: &[f64], slope: f64) -> Vec<f64> {
    let h0: Vec<f64> = head.layers[0].apply(input).into_iter().map(|x| leaky_relu(x, slope)).collect();
    let h1: Vec<f64> = head.layers[1].apply(&h0).into_iter().map(|x| leaky_relu(x, slope)).collect();
    head.layers[2].apply(&h1)
}

pub fn forward(
    cloud: &[Vec3],
    config: &CapsNetConfig,
    weights: &CapsNetWeights,
) -> Result<NetworkOutput, CapsNetError> {
    if cloud.len() != config.num_points {
        return Err(CapsNetError::ShapeMismatch(format!(
            "cloud has {} points, network expects {}",
            cloud.len(),
            config.num_points
        )));
    }
    let n = config.num_points;
    let expected_out = [3 * n, 4 * n, n, n];
    for (head, want) in weights.heads.iter().zip(expected_out) {
        if head.layers[2].outputs != want || head.layers[0].inputs != config.secondary_dim {
            return Err(CapsNetError::ShapeMismatch("head shape does not match config".into()));
        }
    }
    let features = extract_features(cloud, config, weights)?;
    let primary = primary_capsules(&features, config, weights);
    let routing = route(&primary, &weights.route, config.routing_iterations);
    let capsule_norms: Vec<f64> = routing.outputs.iter().map(|v| norm(v)).collect();
    let (winner, _) = classify_norms(&capsule_norms);
    let active = &routing.outputs[winner];
    let slope = config.leaky_slope;

    let recon = run_head(&weights.heads[0], active, slope);
    let rot = run_head(&weights.heads[1], active, slope);
    let quality = run_head(&weights.heads[2], active, slope);
    let width = run_head(&weights.heads[3], active, slope);

    let reconstruction = recon.chunks(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
    let rotations = rot
        .chunks(4)
        .map(|c| {
            let q = Quaternion::new(c[0], c[1], c[2], c[3]);
            let n = q.norm();
            if n > 0.0 && n.is_finite() {
                q / n
            } else {
                Quaternion::identity()
            }
        })
        .collect();
    let quality = if config.quality_clamp {
        quality.into_iter().map(|q| q.clamp(0.0, 1.0)).collect()
    } else {
        quality
    };
    Ok(NetworkOutput {
        capsule_norms,
        winner,
        reconstruction,
        rotations,
        quality,
        width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classify_ties_go_low() {
        let (w, ranked) = classify_norms(&[0.5, 0.5, 0.1]);
        assert_eq!(w, 0);
        assert_eq!(ranked, vec![(0, 0.5), (1, 0.5), (2, 0.1)]);
        assert_eq!(classify_norms(&[0.1, 0.9, 0.3]).0, 1);
    }

    #[test]
    fn collinear_edge_features() {
        let cloud = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(3.0, 0.0, 0.0)];
        let e = edge_features(&cloud, 1).unwrap();
        assert_eq!(e[0], vec![[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]]);
        assert_eq!(e[1], vec![[1.0, 0.0, 0.0, -1.0, 0.0, 0.0]]);
        assert_eq!(e[2], vec![[3.0, 0.0, 0.0, -2.0, 0.0, 0.0]]);
        assert!(matches!(
            edge_features(&cloud[..1], 1),
            Err(CapsNetError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn config_round_trip() {
        let c = CapsNetConfig::toy(128);
        let mut kv = KvConfig::new();
        c.write_config(&mut kv);
        kv.check_known(&CapsNetConfig::KEYS).unwrap();
        assert_eq!(CapsNetConfig::from_config(&kv).unwrap(), c);
    }

    #[test]
    fn weight_file_round_trip() {
        let c = CapsNetConfig {
            edge_channels: vec![4, 4],
            feature_dim: 8,
            fc_dim: 8,
            head_hidden: [4, 4],
            ..CapsNetConfig::toy(16)
        };
        let w = CapsNetWeights::init(&c);
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = CapsNetWeights::read_from(&c, buf.as_slice()).unwrap();
        assert_eq!(back, w);
        let other = CapsNetConfig { num_points: 17, ..c.clone() };
        assert!(matches!(
            CapsNetWeights::read_from(&other, buf.as_slice()),
            Err(CapsNetError::BadWeights(_))
        ));
        buf.truncate(buf.len() - 1);
        assert!(CapsNetWeights::read_from(&c, buf.as_slice()).is_err());
    }
}
