//! Synthetic test objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::pointcloud::{PointCloud, Vec3};

/// Two parallel rectangular walls facing each other across the x axis,
/// standing on the z = 0 plane: the two opposing faces of a box. Normals
/// point outward (±x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoWallBox {
    /// Wall separation along x, meters.
    pub width: f64,
    /// Wall extent along y.
    pub depth: f64,
    /// Wall extent along z.
    pub height: f64,
    /// Sample rows along y.
    pub rows_y: usize,
    /// Sample rows along z.
    pub rows_z: usize,
}

impl Default for TwoWallBox {
    fn default() -> Self {
        Self {
            width: 0.06,
            depth: 0.016,
            height: 0.04,
            rows_y: 5,
            rows_z: 9,
        }
    }
}

impl TwoWallBox {
    /// Index of the sample at the bottom edge, middle column of the +x wall.
    /// Needs an odd `rows_y`.
    pub fn bottom_anchor(&self) -> usize {
        self.rows_y * self.rows_z + (self.rows_y / 2) * self.rows_z
    }

    pub fn cloud(&self) -> PointCloud {
        let mut points = Vec::with_capacity(2 * self.rows_y * self.rows_z);
        let mut normals = Vec::with_capacity(points.capacity());
        let step = |extent: f64, n: usize, i: usize| {
            if n <= 1 {
                0.0
            } else {
                extent * i as f64 / (n - 1) as f64
            }
        };
        for side in [-1.0, 1.0] {
            for i in 0..self.rows_y {
                for j in 0..self.rows_z {
                    points.push(Vec3::new(
                        side * 0.5 * self.width,
                        -0.5 * self.depth + step(self.depth, self.rows_y, i),
                        step(self.height, self.rows_z, j),
                    ));
                    normals.push(Vec3::new(side, 0.0, 0.0));
                }
            }
        }
        PointCloud::with_normals(points, normals).expect("finite synthetic cloud")
    }
}

/// Points drawn uniformly over the six faces of an axis-aligned box that
/// rests on z = 0, centered on the z axis. No normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSurface {
    pub size: Vec3,
    pub points: usize,
    pub seed: u64,
}

impl Default for BoxSurface {
    fn default() -> Self {
        Self {
            size: Vec3::new(0.04, 0.03, 0.06),
            points: 2048,
            seed: 0,
        }
    }
}

impl BoxSurface {
    pub fn cloud(&self) -> PointCloud {
        let s = self.size;
        let areas = [s.y * s.z, s.y * s.z, s.x * s.z, s.x * s.z, s.x * s.y, s.x * s.y];
        let total: f64 = areas.iter().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let points = (0..self.points)
            .map(|_| {
                let mut pick = rng.random::<f64>() * total;
                let mut face = 0;
                while face < 5 && pick >= areas[face] {
                    pick -= areas[face];
                    face += 1;
                }
                let u: f64 = rng.random();
                let v: f64 = rng.random();
                let side = if face % 2 == 0 { -0.5 } else { 0.5 };
                let local = match face / 2 {
                    0 => Vec3::new(side, u - 0.5, v),
                    1 => Vec3::new(u - 0.5, side, v),
                    _ => Vec3::new(u - 0.5, v - 0.5, side + 0.5),
                };
                local.component_mul(&s)
            })
            .collect();
        PointCloud::new(points).expect("finite synthetic cloud")
    }
}
