use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use graspkit::annealer::{optimize_grasp, AnnealSchedule, ScoredGrasp};
use graspkit::capsnet::{classify_norms, forward, NetworkOutput};
use graspkit::config::KvConfig;
use graspkit::datasetgen::{
    class_histogram, generate_sample, read_dataset, validate_sample, write_dataset, Dataset, DatasetHeader,
    GenerateParams,
};
use graspkit::gradcheck::{check_gradients, GRAD_TOLERANCE};
use graspkit::losses::{total_loss, LossTarget, PointGraspTarget};
use graspkit::pointcloud::{estimate_normals, parse_rows, read_xyz, sample_subset_indices, PointCloud, Vec3};
use graspkit::postprocess::{classify_with_vote, smooth_fitness, FitnessField, VoteParams};
use log::{info, warn};
use nalgebra::Quaternion;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{CliError, Kind, Stage};
use crate::settings::Settings;

/// Report printed to stdout and, with `--out`, also written to that file
/// next to a manifest.
fn emit(settings: &Settings, command: &str, inputs: &[&Path], out: Option<&Path>, report: &str) -> Result<(), CliError> {
    print!("{report}");
    if let Some(out) = out {
        std::fs::write(out, report).stage("write")?;
        settings.write_manifest(command, inputs, out)?;
    }
    Ok(())
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    read_xyz(path).stage("load")
}

pub fn gen_grasps(settings: &Settings, cloud_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cloud = load_cloud(cloud_path)?;
    let spec = settings.gripper()?;
    let weights = settings.fitness()?;
    let schedule = settings.schedule()?;
    let grasps: usize = settings.get("grasps")?;
    let normal_k: usize = settings.get("normal_k")?;
    if grasps == 0 {
        return Err(CliError::new("config", Kind::Validation, "grasps must be positive"));
    }
    let cloud = estimate_normals(&cloud.without_normals(), normal_k, &Vec3::zeros()).stage("normals")?;

    // centers and per-run seeds are drawn up front so the result does not
    // depend on scheduling
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let count = grasps.min(cloud.len());
    let runs: Vec<(usize, u64)> = sample(&mut rng, cloud.len(), count)
        .into_iter()
        .map(|c| (c, rng.random()))
        .collect();
    let results: Vec<Result<ScoredGrasp, _>> = settings.install(|| {
        runs.par_iter()
            .map(|&(center, seed)| {
                let run = AnnealSchedule { seed, ..schedule };
                optimize_grasp(&cloud, center, &spec, &weights, &run)
            })
            .collect()
    })?;
    let results = results.into_iter().collect::<Result<Vec<_>, _>>().stage("anneal")?;

    let mut text = String::from(
        "# center_index x y z qw qx qy qz width quality f_enclose f_clearance f_normal f_width f_center collided\n",
    );
    for g in &results {
        let c = g.pose.center;
        let q = g.pose.rotation.quaternion();
        let b = &g.breakdown;
        let _ = writeln!(
            text,
            "{} {} {} {} {} {} {} {} {} {} {} {} {} {} {} {}",
            g.center_index, c.x, c.y, c.z, q.w, q.i, q.j, q.k, g.pose.width, b.score, b.f_enclose,
            b.f_clearance, b.f_normal, b.f_width, b.f_center, b.collided as u8
        );
    }
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("grasps.txt"));
    std::fs::write(&out, &text).stage("write")?;
    settings.write_manifest("gen-grasps", &[cloud_path], &out)?;

    let good = results.iter().filter(|g| !g.breakdown.collided && g.breakdown.score >= 0.5).count();
    let best = results.iter().map(|g| g.breakdown.score).fold(f64::NEG_INFINITY, f64::max);
    println!("grasps = {}", results.len());
    println!("good = {good}");
    println!("best_quality = {best}");
    println!("output = {}", out.display());
    Ok(())
}

pub fn build_dataset(settings: &Settings, dir: &Path, labels_path: &Path, out: Option<&Path>) -> Result<i32, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .stage("load")?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "xyz"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::new(
            "load",
            Kind::Io,
            format!("no .xyz clouds in {}", dir.display()),
        ));
    }
    let mapping = KvConfig::load(labels_path).stage("load")?;
    let mut labels: Vec<String> = mapping.keys().filter_map(|k| mapping.get_str(k)).map(String::from).collect();
    labels.sort();
    labels.dedup();

    let spec = settings.gripper()?;
    let weights = settings.fitness()?;
    let schedule = settings.schedule()?;
    let params = GenerateParams {
        num_points: settings.get("num_points")?,
        grasps: settings.get("grasps")?,
        normal_k: settings.get("normal_k")?,
        seed: 0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let jobs: Vec<(PathBuf, u64)> = files.into_iter().map(|f| (f, rng.random())).collect();

    let results: Vec<(String, Result<_, CliError>)> = settings.install(|| {
        jobs.par_iter()
            .map(|(path, seed)| {
                let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                let run = || {
                    let label_name = mapping.get_str(&name).ok_or_else(|| {
                        CliError::new("labels", Kind::Validation, format!("no label for object `{name}`"))
                    })?;
                    let label = labels.iter().position(|l| l == label_name).expect("label collected above");
                    let cloud = load_cloud(path)?;
                    let p = GenerateParams { seed: *seed, ..params };
                    let s = generate_sample(&name, &cloud, label, &spec, &weights, &schedule, &p).stage("generate")?;
                    info!("{name}: {} grasps", s.grasps.len());
                    Ok(s)
                };
                let r = run();
                (name, r)
            })
            .collect()
    })?;

    let mut samples = Vec::new();
    let mut worst: Option<Kind> = None;
    for (name, r) in results {
        match r {
            Ok(s) => samples.push(s),
            Err(e) => {
                warn!("skipping {name}: {e}");
                worst = Some(match worst {
                    Some(k) if k.exit_code() >= e.kind.exit_code() => k,
                    _ => e.kind,
                });
            }
        }
    }
    let dataset = Dataset {
        header: DatasetHeader::new(labels, spec),
        samples,
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("dataset.ndjson"));
    write_dataset(&dataset, &out).stage("write")?;

    let back = read_dataset(&out).stage("audit")?;
    for s in &back.samples {
        validate_sample(s, &back.header)
            .map_err(|m| CliError::new("audit", Kind::Validation, format!("{}: {m}", s.object_name)))?;
    }
    if back != dataset {
        return Err(CliError::new("audit", Kind::Validation, "re-read dataset differs from the written one"));
    }
    settings.write_manifest("build-dataset", &[dir, labels_path], &out)?;

    let hist = class_histogram(dataset.samples.iter().map(|s| s.label), dataset.header.labels.len());
    println!("samples = {}", dataset.samples.len());
    println!("skipped = {}", jobs.len() - dataset.samples.len());
    println!("grasps = {}", dataset.samples.iter().map(|s| s.grasps.len()).sum::<usize>());
    for (name, count) in dataset.header.labels.iter().zip(hist) {
        println!("class.{name} = {count}");
    }
    println!("output = {}", out.display());
    Ok(worst.map_or(0, Kind::exit_code))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRow {
    capsule_norms: Vec<f64>,
    reconstruction: Vec<[f64; 3]>,
    rotations: Vec<[f64; 4]>,
    quality: Vec<f64>,
    width: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GraspRow {
    quality: f64,
    rotation: [f64; 4],
    width: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetRow {
    label: usize,
    cloud: Vec<[f64; 3]>,
    grasps: Vec<GraspRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LossRecord {
    prediction: PredictionRow,
    target: TargetRow,
}

fn quat(r: [f64; 4]) -> Quaternion<f64> {
    Quaternion::new(r[0], r[1], r[2], r[3])
}

fn vec3(r: [f64; 3]) -> Vec3 {
    Vec3::new(r[0], r[1], r[2])
}

pub fn eval_loss(settings: &Settings, record: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(record).stage("load")?;
    let rec: LossRecord = serde_json::from_str(&text).stage("parse")?;
    let p = rec.prediction;
    let (winner, _) = classify_norms(&p.capsule_norms);
    let output = NetworkOutput {
        capsule_norms: p.capsule_norms,
        winner,
        reconstruction: p.reconstruction.into_iter().map(vec3).collect(),
        rotations: p.rotations.into_iter().map(quat).collect(),
        quality: p.quality,
        width: p.width,
    };
    let t = rec.target;
    let target = LossTarget {
        cloud: t.cloud.into_iter().map(vec3).collect(),
        label: t.label,
        grasps: t
            .grasps
            .into_iter()
            .map(|g| PointGraspTarget {
                quality: g.quality,
                rotation: quat(g.rotation),
                width: g.width,
            })
            .collect(),
    };
    let b = total_loss(&output, &target, &settings.loss()?).stage("loss")?;
    let report = format!(
        "winner = {winner}\nmargin = {}\nreconstruction = {}\ngrasp = {}\ntotal = {}\n",
        b.margin, b.reconstruction, b.grasp, b.total
    );
    emit(settings, "eval-loss", &[record], out, &report)
}

pub fn grad_check(settings: &Settings, out: Option<&Path>) -> Result<i32, CliError> {
    let configs: usize = settings.get("grad_configs")?;
    let points: usize = settings.get("grad_points")?;
    let h: f64 = settings.get("grad_step")?;
    let r = check_gradients(configs, settings.seed, points, &settings.loss()?, h).stage("gradients")?;
    let pass = r.passed(GRAD_TOLERANCE);
    let mut report = String::new();
    let _ = writeln!(report, "configs = {}", r.configs);
    let _ = writeln!(report, "checked = {}", r.checked);
    let _ = writeln!(report, "skipped = {}", r.skipped);
    let _ = writeln!(report, "max_rel_error = {:e}", r.max_rel_error);
    if let Some(s) = r.worst_seed {
        let _ = writeln!(report, "worst_seed = {s}");
    }
    let _ = writeln!(report, "tolerance = {GRAD_TOLERANCE:e}");
    let _ = writeln!(report, "result = {}", if pass { "pass" } else { "fail" });
    emit(settings, "grad-check", &[], out, &report)?;
    Ok(if pass { 0 } else { Kind::Numerical.exit_code() })
}

/// Subsamples to `n` points if the cloud is larger, then normalizes.
fn network_input(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud, CliError> {
    let cloud = cloud.clone().without_normals();
    let cloud = if cloud.len() > n {
        let idx = sample_subset_indices(cloud.len(), n, 1, seed).stage("sample")?;
        cloud.select(&idx[0])
    } else {
        cloud
    };
    Ok(cloud.normalize().stage("normalize")?.0)
}

pub fn forward_cmd(settings: &Settings, cloud_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cloud = load_cloud(cloud_path)?;
    let config = settings.network()?;
    let weights = settings.weights(&config)?;
    if cloud.len() < config.num_points {
        return Err(CliError::new(
            "load",
            Kind::Validation,
            format!("network takes {} points, cloud has {}", config.num_points, cloud.len()),
        ));
    }
    let input = network_input(&cloud, config.num_points, settings.seed)?;
    let o = forward(input.points(), &config, &weights).stage("forward")?;
    let n = input.len();
    let norms: Vec<String> = o.capsule_norms.iter().map(f64::to_string).collect();
    let report = format!(
        "points = {n}\ncapsule_norms = {}\nreconstruction = {}x3\nrotations = {}x4\nquality = {}x1\nwidth = {}x1\nwinner = {}\nnorms = {}\n",
        o.capsule_norms.len(),
        o.reconstruction.len(),
        o.rotations.len(),
        o.quality.len(),
        o.width.len(),
        o.winner,
        norms.join(",")
    );
    print!("{report}");
    if let Some(out) = out {
        let mut rows = String::from("# x y z rx ry rz qw qx qy qz quality width\n");
        for i in 0..n {
            let p = input.point(i);
            let r = o.reconstruction[i];
            let q = o.rotations[i];
            let _ = writeln!(
                rows,
                "{} {} {} {} {} {} {} {} {} {} {} {}",
                p.x, p.y, p.z, r.x, r.y, r.z, q.w, q.i, q.j, q.k, o.quality[i], o.width[i]
            );
        }
        std::fs::write(out, rows).stage("write")?;
        settings.write_manifest("forward", &[cloud_path], out)?;
    }
    Ok(())
}

pub fn smooth(settings: &Settings, field_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let text = std::fs::read_to_string(field_path).stage("load")?;
    let rows = parse_rows::<4>(&text).stage("parse")?;
    let cloud = PointCloud::new(rows.iter().map(|r| Vec3::new(r[0], r[1], r[2])).collect()).stage("parse")?;
    let field = FitnessField::new(&cloud, rows.iter().map(|r| r[3]).collect()).stage("parse")?;
    let smoothed = smooth_fitness(&field, settings.get("smooth_sigma")?, settings.get("smooth_k")?).stage("smooth")?;
    let ascii = smoothed.to_ascii();
    match out {
        Some(out) => {
            std::fs::write(out, ascii).stage("write")?;
            settings.write_manifest("smooth", &[field_path], out)?;
        }
        None => print!("{ascii}"),
    }
    Ok(())
}

pub fn classify(settings: &Settings, cloud_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cloud = load_cloud(cloud_path)?;
    let config = settings.network()?;
    let weights = settings.weights(&config)?;
    let input = cloud.without_normals().normalize().stage("normalize")?.0;
    let params = VoteParams {
        votes: settings.get("votes")?,
        max_rounds: settings.get("max_rounds")?,
        seed: settings.seed,
    };
    let outcome = classify_with_vote(&input, &config, &weights, &params).stage("classify")?;
    let mut report = format!("winner = {}\nrounds = {}\n", outcome.winner, outcome.rounds);
    for (i, preds) in outcome.history.iter().enumerate() {
        let p: Vec<String> = preds.iter().map(usize::to_string).collect();
        let _ = writeln!(report, "round.{} = {}", i + 1, p.join(","));
    }
    emit(settings, "classify", &[cloud_path], out, &report)
}
