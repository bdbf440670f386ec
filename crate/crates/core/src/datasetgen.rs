//! Grasp dataset generation and the NDJSON dataset file.
//!
//! File layout: a header line `{"format_version", "labels", "gripper"}`
//! followed by one JSON object per sample:
//!
//! ```text
//! {"object_name": str, "label": int,
//!  "transform": {"offset": [x, y, z], "scale": s},
//!  "points": [[x, y, z], ...],
//!  "grasps": [{"center_index": int, "rotation": [w, x, y, z],
//!              "quality": q, "width": w}, ...]}
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces every value exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Quaternion;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annealer::{optimize_grasp, AnnealError, AnnealSchedule};
use crate::fitness::FitnessWeights;
use crate::gripper::{GripperSpec, UNIT_TOLERANCE};
use crate::pointcloud::{
    estimate_normals, sample_subset_indices, NormalizationTransform, PointCloud, PointCloudError,
    Vec3, DEFAULT_NORMAL_K,
};

pub const FORMAT_VERSION: u32 = 1;
pub const DEFAULT_GRASPS_PER_OBJECT: usize = 120;
pub const DEFAULT_SAMPLE_POINTS: usize = 1024;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    PointCloud(#[from] PointCloudError),
    #[error(transparent)]
    Anneal(#[from] AnnealError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspRecord {
    /// Index into the sample's cloud.
    pub center_index: usize,
    pub rotation: Quaternion<f64>,
    pub quality: f64,
    /// Opening in meters.
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSample {
    pub object_name: String,
    pub label: usize,
    /// Normalized network input.
    pub cloud: PointCloud,
    /// Maps the object's metric frame to `cloud`.
    pub transform: NormalizationTransform,
    pub grasps: Vec<GraspRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub labels: Vec<String>,
    pub gripper: GripperSpec,
}

impl DatasetHeader {
    pub fn new(labels: Vec<String>, gripper: GripperSpec) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            labels,
            gripper,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<GraspSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateParams {
    pub num_points: usize,
    pub grasps: usize,
    pub normal_k: usize,
    /// Master seed: drives the subsample, the centers and every annealing run.
    pub seed: u64,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            num_points: DEFAULT_SAMPLE_POINTS,
            grasps: DEFAULT_GRASPS_PER_OBJECT,
            normal_k: DEFAULT_NORMAL_K,
            seed: 0,
        }
    }
}

/// Subsamples `cloud` to `num_points`, estimates normals, anneals one grasp
/// per random center and stores the normalized cloud with the grasps.
///
/// The search runs in the object's metric frame, so widths are in meters;
/// rotations are unaffected by the normalization.
pub fn generate_sample(
    object_name: &str,
    cloud: &PointCloud,
    label: usize,
    spec: &GripperSpec,
    weights: &FitnessWeights,
    schedule: &AnnealSchedule,
    params: &GenerateParams,
) -> Result<GraspSample, DatasetError> {
    if params.num_points == 0 || params.grasps == 0 {
        return Err(DatasetError::InvalidParameter(
            "num_points and grasps must be positive".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let subset = sample_subset_indices(cloud.len(), params.num_points, 1, rng.random())?;
    let metric = estimate_normals(
        &cloud.select(&subset[0]).without_normals(),
        params.normal_k,
        &Vec3::zeros(),
    )?;

    let n = metric.len();
    let centers: Vec<usize> = if params.grasps <= n {
        sample(&mut rng, n, params.grasps).into_vec()
    } else {
        (0..params.grasps).map(|_| rng.random_range(0..n)).collect()
    };
    let mut grasps = Vec::with_capacity(centers.len());
    for center in centers {
        let run = AnnealSchedule {
            seed: rng.random(),
            ..*schedule
        };
        let best = optimize_grasp(&metric, center, spec, weights, &run)?;
        grasps.push(GraspRecord {
            center_index: center,
            rotation: *best.pose.rotation.quaternion(),
            quality: best.breakdown.score.clamp(0.0, 1.0),
            width: best.pose.width,
        });
    }

    let (normalized, transform) = metric.without_normals().normalize()?;
    Ok(GraspSample {
        object_name: object_name.to_string(),
        label,
        cloud: normalized,
        transform,
        grasps,
    })
}

/// Classification view: `(cloud, label)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassificationItem<'a> {
    pub cloud: &'a PointCloud,
    pub label: usize,
}

/// Grasping view: `(cloud, label, grasps)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspingItem<'a> {
    pub cloud: &'a PointCloud,
    pub label: usize,
    pub grasps: &'a [GraspRecord],
}

pub fn split_views(samples: &[GraspSample]) -> (Vec<ClassificationItem<'_>>, Vec<GraspingItem<'_>>) {
    samples
        .iter()
        .map(|s| {
            (
                ClassificationItem {
                    cloud: &s.cloud,
                    label: s.label,
                },
                GraspingItem {
                    cloud: &s.cloud,
                    label: s.label,
                    grasps: &s.grasps,
                },
            )
        })
        .unzip()
}

/// Samples per label index, sized to `num_labels`.
pub fn class_histogram(labels: impl IntoIterator<Item = usize>, num_labels: usize) -> Vec<usize> {
    let mut counts = vec![0; num_labels];
    for l in labels {
        if l >= counts.len() {
            counts.resize(l + 1, 0);
        }
        counts[l] += 1;
    }
    counts
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransformRow {
    offset: [f64; 3],
    scale: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRow {
    center_index: usize,
    rotation: [f64; 4],
    quality: f64,
    width: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRow {
    object_name: String,
    label: usize,
    transform: TransformRow,
    points: Vec<[f64; 3]>,
    grasps: Vec<GraspRow>,
}

impl From<&GraspSample> for SampleRow {
    fn from(s: &GraspSample) -> Self {
        let o = s.transform.offset;
        Self {
            object_name: s.object_name.clone(),
            label: s.label,
            transform: TransformRow {
                offset: [o.x, o.y, o.z],
                scale: s.transform.scale,
            },
            points: s.cloud.points().iter().map(|p| [p.x, p.y, p.z]).collect(),
            grasps: s
                .grasps
                .iter()
                .map(|g| GraspRow {
                    center_index: g.center_index,
                    rotation: [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k],
                    quality: g.quality,
                    width: g.width,
                })
                .collect(),
        }
    }
}

/// Checks the record invariants of one sample against `header`.
pub fn validate_sample(sample: &GraspSample, header: &DatasetHeader) -> Result<(), String> {
    if sample.label >= header.labels.len() {
        return Err(format!(
            "label {} out of range for {} labels",
            sample.label,
            header.labels.len()
        ));
    }
    for (k, g) in sample.grasps.iter().enumerate() {
        let norm = g.rotation.norm();
        if !((norm - 1.0).abs() < UNIT_TOLERANCE) {
            return Err(format!("grasp {k}: rotation norm {norm} is not unit"));
        }
        if !(0.0..=1.0).contains(&g.quality) {
            return Err(format!("grasp {k}: quality {} outside [0, 1]", g.quality));
        }
        if !(0.0..=header.gripper.max_width).contains(&g.width) {
            return Err(format!(
                "grasp {k}: width {} outside [0, {}]",
                g.width, header.gripper.max_width
            ));
        }
        if g.center_index >= sample.cloud.len() {
            return Err(format!(
                "grasp {k}: center_index {} but cloud has {} points",
                g.center_index,
                sample.cloud.len()
            ));
        }
    }
    Ok(())
}

fn sample_from_row(row: SampleRow) -> Result<GraspSample, String> {
    let cloud = PointCloud::from_rows(&row.points).map_err(|e| e.to_string())?;
    let scale = row.transform.scale;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(format!("transform scale {scale} must be positive"));
    }
    Ok(GraspSample {
        object_name: row.object_name,
        label: row.label,
        cloud,
        transform: NormalizationTransform {
            offset: Vec3::from(row.transform.offset),
            scale,
        },
        grasps: row
            .grasps
            .into_iter()
            .map(|g| GraspRecord {
                center_index: g.center_index,
                rotation: Quaternion::new(g.rotation[0], g.rotation[1], g.rotation[2], g.rotation[3]),
                quality: g.quality,
                width: g.width,
            })
            .collect(),
    })
}

pub fn write_dataset_to(dataset: &Dataset, mut out: impl Write) -> std::io::Result<()> {
    serde_json::to_writer(&mut out, &dataset.header)?;
    out.write_all(b"\n")?;
    for s in &dataset.samples {
        serde_json::to_writer(&mut out, &SampleRow::from(s))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    write_dataset_to(dataset, &mut w).map_err(io)?;
    w.flush().map_err(io)
}

/// Parses a dataset and validates every record. Errors name the 1-based
/// line of the offending record.
pub fn read_dataset_from(input: impl BufRead) -> Result<Dataset, DatasetError> {
    let io = |source| DatasetError::Io {
        path: "<input>".into(),
        source,
    };
    let mut lines = input.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, l)) => l.map_err(io)?,
        None => {
            return Err(DatasetError::MalformedRecord {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| DatasetError::MalformedRecord {
            line: 1,
            message: format!("header: {e}"),
        })?;
    if header.format_version != FORMAT_VERSION {
        return Err(DatasetError::MalformedRecord {
            line: 1,
            message: format!("unsupported format_version {}", header.format_version),
        });
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| DatasetError::MalformedRecord {
            line: i + 1,
            message,
        };
        let row: SampleRow = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let name = row.object_name.clone();
        let sample = sample_from_row(row).map_err(|m| malformed(format!("{name}: {m}")))?;
        validate_sample(&sample, &header).map_err(|m| malformed(format!("{name}: {m}")))?;
        samples.push(sample);
    }
    Ok(Dataset { header, samples })
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_dataset_from(BufReader::new(file)).map_err(|e| match e {
        DatasetError::Io { source, .. } => DatasetError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_sample() -> GraspSample {
        let cloud = PointCloud::from_rows(&[[0.1, -0.2, 0.3], [1.0 / 3.0, 0.0, -0.0], [0.5, 0.5, 0.5]]).unwrap();
        GraspSample {
            object_name: "thing".into(),
            label: 1,
            cloud,
            transform: NormalizationTransform {
                offset: Vec3::new(0.01, 0.02, 0.0),
                scale: 0.123456789,
            },
            grasps: vec![GraspRecord {
                center_index: 2,
                rotation: Quaternion::new(0.5, 0.5, -0.5, 0.5),
                quality: 0.7123456789012345,
                width: 0.031,
            }],
        }
    }

    fn header() -> DatasetHeader {
        DatasetHeader::new(vec!["box".into(), "cylinder".into()], GripperSpec::default())
    }

    #[test]
    fn empty_dataset_round_trip() {
        let d = Dataset {
            header: header(),
            samples: vec![],
        };
        let mut buf = Vec::new();
        write_dataset_to(&d, &mut buf).unwrap();
        assert_eq!(read_dataset_from(buf.as_slice()).unwrap(), d);
    }

    #[test]
    fn sample_round_trip_is_exact() {
        let d = Dataset {
            header: header(),
            samples: vec![tiny_sample()],
        };
        let mut buf = Vec::new();
        write_dataset_to(&d, &mut buf).unwrap();
        let back = read_dataset_from(buf.as_slice()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn corrupted_quaternion_names_the_line() {
        let mut s = tiny_sample();
        s.grasps[0].rotation = Quaternion::new(0.5, 0.0, 0.0, 0.0);
        let d = Dataset {
            header: header(),
            samples: vec![tiny_sample(), s],
        };
        let mut buf = Vec::new();
        write_dataset_to(&d, &mut buf).unwrap();
        match read_dataset_from(buf.as_slice()) {
            Err(DatasetError::MalformedRecord { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("thing") && message.contains("norm"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn views_share_clouds() {
        let mut b = tiny_sample();
        b.label = 0;
        let samples = vec![tiny_sample(), b, tiny_sample()];
        let (cls, grasp) = split_views(&samples);
        assert_eq!(cls.len(), 3);
        assert_eq!(grasp.len(), 3);
        for (c, g) in cls.iter().zip(&grasp) {
            assert!(std::ptr::eq(c.cloud, g.cloud));
        }
        assert_eq!(
            class_histogram(cls.iter().map(|c| c.label), 2),
            class_histogram(grasp.iter().map(|g| g.label), 2)
        );
        assert_eq!(class_histogram(cls.iter().map(|c| c.label), 2), vec![1, 2]);
    }
}
