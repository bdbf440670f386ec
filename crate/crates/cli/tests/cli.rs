use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use graspkit::pointcloud::write_xyz;
use graspkit::synthetic::BoxSurface;
use tempfile::TempDir;

fn graspkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graspkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value<'a>(report: &'a str, key: &str) -> &'a str {
    report
        .lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(" = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {report}"))
}

fn write_box(dir: &Path, name: &str, seed: u64) {
    let cloud = BoxSurface {
        points: 1500,
        seed,
        ..Default::default()
    }
    .cloud();
    fs::write(dir.join(name), write_xyz(&cloud)).unwrap();
}

const FAST: &str = "iterations = 300\ngrasps = 12\n";

#[test]
fn missing_cloud_exits_with_io_code_and_names_stage() {
    let dir = TempDir::new().unwrap();
    let o = graspkit(dir.path(), &["gen-grasps", "nope.xyz"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("load"));
}

#[test]
fn bad_config_key_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.cfg"), "no_such_key = 1\n").unwrap();
    let o = graspkit(dir.path(), &["grad-check", "--config", "c.cfg"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("config"));
}

#[test]
fn gen_grasps_on_box_finds_good_grasp() {
    let dir = TempDir::new().unwrap();
    write_box(dir.path(), "box.xyz", 0);
    let o = graspkit(dir.path(), &["gen-grasps", "box.xyz", "--seed", "3", "--out", "g.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("g.txt")).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 120);
    assert!(rows.iter().any(|r| r[9] >= 0.5 && r[15] == 0.0));
    assert!(dir.path().join("g.txt.manifest").exists());
}

#[test]
fn gen_grasps_is_deterministic_and_manifest_replays() {
    let dir = TempDir::new().unwrap();
    write_box(dir.path(), "box.xyz", 1);
    fs::write(dir.path().join("fast.cfg"), FAST).unwrap();
    let run = |out: &str, extra: &[&str]| {
        let mut args = vec!["gen-grasps", "box.xyz", "--out", out];
        args.extend_from_slice(extra);
        let o = graspkit(dir.path(), &args);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join(out)).unwrap()
    };
    let a = run("a.txt", &["--config", "fast.cfg", "--seed", "9", "--jobs", "1"]);
    let b = run("b.txt", &["--config", "fast.cfg", "--seed", "9", "--jobs", "4"]);
    assert_eq!(a, b);
    let c = run("c.txt", &["--config", "a.txt.manifest"]);
    assert_eq!(a, c);
    let d = run("d.txt", &["--config", "fast.cfg", "--seed", "10"]);
    assert_ne!(a, d);

    let manifest = fs::read_to_string(dir.path().join("a.txt.manifest")).unwrap();
    assert_eq!(value(&manifest, "seed"), "9");
    assert_eq!(value(&manifest, "iterations"), "300");
    assert_eq!(value(&manifest, "run.command"), "gen-grasps");
    assert!(manifest.contains("run.started_unix"));
}

#[test]
fn build_dataset_three_objects() {
    let dir = TempDir::new().unwrap();
    let clouds = dir.path().join("clouds");
    fs::create_dir(&clouds).unwrap();
    for (i, name) in ["a.xyz", "b.xyz", "c.xyz"].iter().enumerate() {
        write_box(&clouds, name, i as u64);
    }
    fs::write(dir.path().join("labels.cfg"), "a = mug\nb = box\nc = mug\n").unwrap();
    fs::write(dir.path().join("fast.cfg"), "iterations = 300\n").unwrap();
    let args = |out: &'static str| {
        vec!["build-dataset", "clouds", "labels.cfg", "--config", "fast.cfg", "--seed", "4", "--out", out]
    };
    let o = graspkit(dir.path(), &args("d1.ndjson"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert_eq!(value(&report, "samples"), "3");
    assert_eq!(value(&report, "grasps"), "360");
    assert_eq!(value(&report, "class.mug"), "2");
    assert_eq!(value(&report, "class.box"), "1");

    let ds = graspkit::datasetgen::read_dataset(dir.path().join("d1.ndjson")).unwrap();
    assert_eq!(ds.samples.len(), 3);
    for s in &ds.samples {
        assert_eq!(s.grasps.len(), 120);
        graspkit::datasetgen::validate_sample(s, &ds.header).unwrap();
    }

    let o = graspkit(dir.path(), &args("d2.ndjson"));
    assert!(o.status.success());
    assert_eq!(
        fs::read(dir.path().join("d1.ndjson")).unwrap(),
        fs::read(dir.path().join("d2.ndjson")).unwrap()
    );
}

#[test]
fn build_dataset_skips_unlabeled_objects_and_reports_it() {
    let dir = TempDir::new().unwrap();
    let clouds = dir.path().join("clouds");
    fs::create_dir(&clouds).unwrap();
    write_box(&clouds, "a.xyz", 0);
    write_box(&clouds, "b.xyz", 1);
    fs::write(dir.path().join("labels.cfg"), "a = mug\n").unwrap();
    fs::write(dir.path().join("fast.cfg"), "iterations = 100\ngrasps = 5\n").unwrap();
    let o = graspkit(
        dir.path(),
        &["build-dataset", "clouds", "labels.cfg", "--config", "fast.cfg", "--out", "d.ndjson"],
    );
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(value(&stdout(&o), "samples"), "1");
    assert_eq!(value(&stdout(&o), "skipped"), "1");
}

#[test]
fn build_dataset_on_empty_directory_fails() {
    let dir = TempDir::new().unwrap();
    fs::create_dir(dir.path().join("empty")).unwrap();
    fs::write(dir.path().join("labels.cfg"), "").unwrap();
    let o = graspkit(dir.path(), &["build-dataset", "empty", "labels.cfg"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn grad_check_reports_pass() {
    let dir = TempDir::new().unwrap();
    let o = graspkit(dir.path(), &["grad-check", "--out", "grad.txt"]);
    assert!(o.status.success());
    let report = stdout(&o);
    assert_eq!(value(&report, "result"), "pass");
    assert!(value(&report, "checked").parse::<usize>().unwrap() >= 100);
    assert!(value(&report, "max_rel_error").parse::<f64>().unwrap() < 1e-4);
    assert_eq!(fs::read_to_string(dir.path().join("grad.txt")).unwrap(), report);
}

#[test]
fn forward_reports_full_size_shapes() {
    let dir = TempDir::new().unwrap();
    write_box(dir.path(), "box.xyz", 2);
    let o = graspkit(dir.path(), &["forward", "box.xyz", "--out", "f.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout(&o);
    assert_eq!(value(&r, "points"), "1024");
    assert_eq!(value(&r, "capsule_norms"), "8");
    assert_eq!(value(&r, "reconstruction"), "1024x3");
    assert_eq!(value(&r, "rotations"), "1024x4");
    assert_eq!(value(&r, "quality"), "1024x1");
    assert_eq!(value(&r, "width"), "1024x1");
    let rows = fs::read_to_string(dir.path().join("f.txt")).unwrap();
    assert_eq!(rows.lines().filter(|l| !l.starts_with('#')).count(), 1024);
}

#[test]
fn forward_rejects_small_cloud() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("c.xyz"), "0 0 0\n1 0 0\n0 1 0\n").unwrap();
    let o = graspkit(dir.path(), &["forward", "c.xyz"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn smooth_keeps_constant_field() {
    let dir = TempDir::new().unwrap();
    let mut text = String::new();
    for i in 0..50 {
        let t = i as f64 * 0.01;
        text.push_str(&format!("{} {} {} 0.75\n", t, (t * 7.0).sin() * 0.1, t * t));
    }
    fs::write(dir.path().join("f.txt"), &text).unwrap();
    let o = graspkit(dir.path(), &["smooth", "f.txt"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let parse = |s: &str| -> Vec<Vec<f64>> {
        s.lines()
            .map(|l| l.split_whitespace().map(|f| f.parse().unwrap()).collect())
            .collect()
    };
    assert_eq!(parse(&stdout(&o)), parse(&text));
}

#[test]
fn eval_loss_prints_breakdown() {
    let dir = TempDir::new().unwrap();
    let record = r#"{
      "prediction": {
        "capsule_norms": [0.95, 0.05],
        "reconstruction": [[0, 0, 0], [1, 2, 2]],
        "rotations": [[1, 0, 0, 0], [1, 0, 0, 0]],
        "quality": [0.5, 0.5],
        "width": [0.02, 0.03]
      },
      "target": {
        "label": 0,
        "cloud": [[0, 0, 0], [1, 2, 2]],
        "grasps": [
          {"quality": 0.5, "rotation": [1, 0, 0, 0], "width": 0.02},
          {"quality": 0.5, "rotation": [0, 0, 0, 1], "width": 0.03}
        ]
      }
    }"#;
    fs::write(dir.path().join("r.json"), record).unwrap();
    let o = graspkit(dir.path(), &["eval-loss", "r.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = stdout(&o);
    assert_eq!(value(&r, "winner"), "0");
    for key in ["margin", "reconstruction", "grasp", "total"] {
        assert!(value(&r, key).parse::<f64>().unwrap().abs() < 1e-12, "{key}");
    }

    fs::write(dir.path().join("bad.json"), record.replace("[0, 0, 0, 1]", "[0, 0, 0, 2]")).unwrap();
    let o = graspkit(dir.path(), &["eval-loss", "bad.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn classify_is_deterministic() {
    let dir = TempDir::new().unwrap();
    write_box(dir.path(), "box.xyz", 3);
    fs::write(dir.path().join("toy.cfg"), "network = toy\nnum_points = 128\nvotes = 3\n").unwrap();
    let run = || {
        let o = graspkit(dir.path(), &["classify", "box.xyz", "--config", "toy.cfg", "--seed", "5"]);
        (o.status.code(), stdout(&o))
    };
    let a = run();
    assert_eq!(a, run());
    if a.0 == Some(0) {
        assert!(value(&a.1, "winner").parse::<usize>().unwrap() < 8);
    } else {
        assert_eq!(a.0, Some(4));
    }
}
