use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{PointCloud, PointCloudError, Vec3};

/// Largest per-coordinate perturbation used for training-time augmentation.
pub const DEFAULT_NOISE_BOUND: f64 = 0.005;

/// `m` independent uniform subsets of `0..len` of size `n`, each in random
/// order.
pub fn sample_subset_indices(
    len: usize,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, PointCloudError> {
    if len < n {
        return Err(PointCloudError::TooFewPoints {
            required: n.saturating_sub(1),
            got: len,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<usize> = (0..len).collect();
    Ok((0..m)
        .map(|_| {
            // partial_shuffle draws a uniform subset in uniform order; the
            // pool is reset so draws are independent of each other
            pool.iter_mut().enumerate().for_each(|(i, v)| *v = i);
            let (chosen, _) = pool.partial_shuffle(&mut rng, n);
            chosen.to_vec()
        })
        .collect())
}

pub fn sample_permutations(
    cloud: &PointCloud,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<Vec<PointCloud>, PointCloudError> {
    Ok(sample_subset_indices(cloud.len(), n, m, seed)?
        .iter()
        .map(|idx| cloud.select(idx))
        .collect())
}

/// Adds zero-mean Gaussian noise with standard deviation `bound / 2`,
/// clipped to `[-bound, bound]`, to every coordinate. Normals are dropped.
pub fn augment_noise(cloud: &PointCloud, bound: f64, seed: u64) -> Result<PointCloud, PointCloudError> {
    if !(bound > 0.0 && bound.is_finite()) {
        return Err(PointCloudError::InvalidParameter(format!(
            "noise bound must be positive, got {bound}"
        )));
    }
    let normal = Normal::new(0.0, bound / 2.0)
        .map_err(|e| PointCloudError::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || normal.sample(&mut rng).clamp(-bound, bound);
    let points = cloud
        .points()
        .iter()
        .map(|p| p + Vec3::new(draw(), draw(), draw()))
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new((0..n).map(|i| Vec3::new(i as f64, 0.5 * i as f64, 1.0)).collect()).unwrap()
    }

    #[test]
    fn full_subset_is_a_permutation() {
        let c = line(64);
        let out = sample_permutations(&c, 64, 1, 9).unwrap();
        let mut a: Vec<_> = out[0].points().iter().map(|p| p.x).collect();
        a.sort_by(f64::total_cmp);
        let b: Vec<_> = c.points().iter().map(|p| p.x).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn deterministic_given_seed() {
        let c = line(100);
        assert_eq!(
            sample_permutations(&c, 40, 3, 11).unwrap(),
            sample_permutations(&c, 40, 3, 11).unwrap()
        );
        assert_ne!(
            sample_permutations(&c, 40, 3, 11).unwrap(),
            sample_permutations(&c, 40, 3, 12).unwrap()
        );
    }

    #[test]
    fn subsets_have_no_duplicates() {
        let subsets = sample_subset_indices(2048, 1024, 5, 1).unwrap();
        assert_eq!(subsets.len(), 5);
        for s in &subsets {
            assert_eq!(s.len(), 1024);
            let mut seen = vec![false; 2048];
            for &i in s {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert_ne!(subsets[0], subsets[1]);
    }

    #[test]
    fn too_few_points_for_subset() {
        assert!(matches!(
            sample_subset_indices(10, 11, 1, 0),
            Err(PointCloudError::TooFewPoints { got: 10, .. })
        ));
    }

    #[test]
    fn noise_respects_bound() {
        let c = line(2000);
        let out = augment_noise(&c, DEFAULT_NOISE_BOUND, 5).unwrap();
        for (a, b) in c.points().iter().zip(out.points()) {
            for d in (b - a).iter() {
                // recovered difference carries the rounding of the sum
                assert!(d.abs() <= DEFAULT_NOISE_BOUND + 1e-12);
            }
        }
        assert!(out.normals().is_none());
    }

    #[test]
    fn vanishing_bound_leaves_cloud_unchanged() {
        let c = PointCloud::new((1..50).map(|i| Vec3::new(i as f64, 0.25, -1.0)).collect()).unwrap();
        let out = augment_noise(&c, 1e-300, 5).unwrap();
        assert_eq!(out.points(), c.points());
    }

    #[test]
    fn noise_statistics() {
        let zeros = PointCloud::new(vec![Vec3::zeros(); 100_000 / 3 + 1]).unwrap();
        let out = augment_noise(&zeros, 0.005, 77).unwrap();
        let samples: Vec<f64> = out.points().iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-4, "mean {mean}");
        assert!((var.sqrt() - 0.0025).abs() / 0.0025 < 0.05, "std {}", var.sqrt());
    }
}
