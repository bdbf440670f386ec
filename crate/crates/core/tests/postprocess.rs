mod common;

use common::random_cloud;
use graspkit::capsnet::{CapsNetConfig, CapsNetWeights, NetworkOutput};
use graspkit::gradcheck::random_unit_quaternion;
use graspkit::pointcloud::{PointCloud, Vec3};
use graspkit::postprocess::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(seed: u64, n: usize) -> (PointCloud, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = random_cloud(&mut rng, n);
    let values = (0..n).map(|_| rng.random_range(-1.0..2.0)).collect();
    (cloud, values)
}

fn output_for(seed: u64, n: usize) -> NetworkOutput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NetworkOutput {
        capsule_norms: vec![0.5; 8],
        winner: 0,
        reconstruction: vec![Vec3::zeros(); n],
        rotations: (0..n).map(|_| random_unit_quaternion(&mut rng)).collect(),
        quality: vec![0.0; n],
        width: (0..n).map(|_| rng.random_range(0.0..0.08)).collect(),
    }
}

#[test]
fn select_matches_exhaustive_argmax() {
    for seed in 0..20 {
        let (cloud, values) = setup(seed, 60);
        let field = FitnessField::new(&cloud, values.clone()).unwrap();
        let out = output_for(seed, 60);
        let (i, pose) = select_grasp(&out, &field).unwrap();
        let mut best = 0;
        for j in 1..values.len() {
            if values[j] > values[best] {
                best = j;
            }
        }
        assert_eq!(i, best);
        assert_eq!(pose.center, cloud.point(i));
        assert_eq!(*pose.rotation.quaternion(), out.rotations[i]);
        assert!((pose.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
        assert_eq!(pose.width, out.width[i]);
    }
}

#[test]
fn select_rejects_mismatched_rows() {
    let (cloud, values) = setup(1, 30);
    let field = FitnessField::new(&cloud, values).unwrap();
    assert!(matches!(
        select_grasp(&output_for(1, 29), &field),
        Err(PostprocessError::ShapeMismatch(_))
    ));
}

#[test]
fn unanimous_stub_finishes_in_one_round() {
    let (cloud, _) = setup(2, 100);
    let r = vote_with(&cloud, 50, &VoteParams::default(), |_| Ok(3)).unwrap();
    assert_eq!((r.winner, r.rounds), (3, 1));
    assert_eq!(r.history, vec![vec![3; 5]]);
}

#[test]
fn network_vote_is_seed_deterministic() {
    let config = CapsNetConfig::toy(96);
    let weights = CapsNetWeights::init(&config);
    let (cloud, _) = setup(3, 300);
    let params = VoteParams {
        seed: 17,
        ..Default::default()
    };
    let a = classify_with_vote(&cloud, &config, &weights, &params).unwrap();
    let b = classify_with_vote(&cloud, &config, &weights, &params).unwrap();
    assert_eq!(a, b);
    assert!(a.winner < 8);
}

#[test]
fn too_small_cloud_for_voting() {
    let config = CapsNetConfig::toy(96);
    let weights = CapsNetWeights::init(&config);
    let (cloud, _) = setup(3, 50);
    assert!(matches!(
        classify_with_vote(&cloud, &config, &weights, &VoteParams::default()),
        Err(PostprocessError::PointCloud(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn smoothing_stays_in_range(seed in any::<u64>(), sigma in 0.01..1.0f64, k in 1usize..20) {
        let (cloud, values) = setup(seed, 40);
        let field = FitnessField::new(&cloud, values.clone()).unwrap();
        let out = smooth_fitness(&field, sigma, k).unwrap();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(out.values().iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn constant_fields_are_fixed(seed in any::<u64>(), c in -5.0..5.0f64) {
        let (cloud, _) = setup(seed, 30);
        let field = FitnessField::new(&cloud, vec![c; 30]).unwrap();
        let out = smooth_fitness(&field, DEFAULT_SMOOTH_SIGMA, DEFAULT_SMOOTH_K).unwrap();
        prop_assert!(out.values().iter().all(|v| *v == c));
    }

    #[test]
    fn smoothing_ignores_point_labels(seed in any::<u64>()) {
        let (cloud, values) = setup(seed, 40);
        let mut perm: Vec<usize> = (0..40).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let permuted_cloud = cloud.select(&perm);
        let permuted_values: Vec<f64> = perm.iter().map(|&i| values[i]).collect();
        let a = smooth_fitness(&FitnessField::new(&cloud, values).unwrap(), 0.3, 8).unwrap();
        let b = smooth_fitness(&FitnessField::new(&permuted_cloud, permuted_values).unwrap(), 0.3, 8).unwrap();
        for (new_i, &old_i) in perm.iter().enumerate() {
            prop_assert!((a.values()[old_i] - b.values()[new_i]).abs() < 1e-12);
        }
    }

    #[test]
    fn selection_survives_monotone_maps(seed in any::<u64>()) {
        let (cloud, values) = setup(seed, 50);
        let out = output_for(seed, 50);
        let a = select_grasp(&out, &FitnessField::new(&cloud, values.clone()).unwrap()).unwrap().0;
        let mapped: Vec<f64> = values.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
        let b = select_grasp(&out, &FitnessField::new(&cloud, mapped).unwrap()).unwrap().0;
        prop_assert_eq!(a, b);
    }

    #[test]
    fn vote_agrees_with_counting(preds in prop::collection::vec(0usize..4, 1..12)) {
        let mut counts = [0usize; 4];
        for &p in &preds {
            counts[p] += 1;
        }
        let top = *counts.iter().max().unwrap();
        let leaders: Vec<usize> = (0..4).filter(|&c| counts[c] == top).collect();
        let expected = if leaders.len() == 1 { Vote::Winner(leaders[0]) } else { Vote::NeedsRerun };
        prop_assert_eq!(majority_vote(&preds).unwrap(), expected);
    }
}
