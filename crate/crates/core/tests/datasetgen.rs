use graspkit::annealer::AnnealSchedule;
use graspkit::datasetgen::*;
use graspkit::fitness::FitnessWeights;
use graspkit::gripper::GripperSpec;
use graspkit::synthetic::BoxSurface;

fn box_sample(seed: u64) -> GraspSample {
    let cloud = BoxSurface {
        seed,
        ..Default::default()
    }
    .cloud();
    generate_sample(
        "box",
        &cloud,
        0,
        &GripperSpec::default(),
        &FitnessWeights::default(),
        &AnnealSchedule::default(),
        &GenerateParams {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn header() -> DatasetHeader {
    DatasetHeader::new(vec!["box".into(), "other".into()], GripperSpec::default())
}

#[test]
fn box_sample_is_valid_and_reproducible() {
    let s = box_sample(2);
    assert_eq!(s.grasps.len(), 120);
    assert_eq!(s.cloud.len(), 1024);
    validate_sample(&s, &header()).unwrap();
    let mut centers: Vec<usize> = s.grasps.iter().map(|g| g.center_index).collect();
    centers.sort();
    centers.dedup();
    assert_eq!(centers.len(), 120);
    assert!(s
        .cloud
        .points()
        .iter()
        .all(|p| p.iter().all(|c| c.abs() <= 1.0)));

    let mut q: Vec<f64> = s.grasps.iter().map(|g| g.quality).collect();
    q.sort_by(|a, b| b.total_cmp(a));
    let top10 = q[..10].iter().sum::<f64>() / 10.0;
    assert!(top10 >= 0.5, "top-10 mean quality {top10}");

    assert_eq!(box_sample(2), s);
}

#[test]
fn files_round_trip_and_repeat_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let mut small = box_sample(5);
    small.grasps.truncate(7);
    let d = Dataset {
        header: header(),
        samples: vec![small.clone(), GraspSample { label: 1, ..small }],
    };
    let a = dir.path().join("a.ndjson");
    let b = dir.path().join("b.ndjson");
    write_dataset(&d, &a).unwrap();
    write_dataset(&d, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let back = read_dataset(&a).unwrap();
    assert_eq!(back, d);
    assert_eq!(
        class_histogram(back.samples.iter().map(|s| s.label), 2),
        vec![1, 1]
    );
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(
        read_dataset("/nonexistent/dataset.ndjson"),
        Err(DatasetError::Io { .. })
    ));
}

#[test]
fn out_of_range_width_is_malformed() {
    let mut s = box_sample(6);
    s.grasps.truncate(2);
    s.grasps[1].width = 0.5;
    let mut buf = Vec::new();
    write_dataset_to(
        &Dataset {
            header: header(),
            samples: vec![s],
        },
        &mut buf,
    )
    .unwrap();
    match read_dataset_from(buf.as_slice()) {
        Err(DatasetError::MalformedRecord { line: 2, message }) => assert!(message.contains("width")),
        other => panic!("{other:?}"),
    }
}
