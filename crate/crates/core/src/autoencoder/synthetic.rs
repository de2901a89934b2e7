//! Voxelized planes, spheres and box surfaces for desk-scale training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor4;
use crate::error::Result;
use crate::pointcloud::{Point, PointCloud};
use crate::voxel::{voxelize, Repr, TdfConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Plane,
    Sphere,
    Box,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Plane, ShapeKind::Sphere, ShapeKind::Box];
}

/// Integer-coordinate surface of a random shape inside a `size³` block.
/// Never empty for `size >= 8`.
pub fn synthetic_block(kind: ShapeKind, size: usize, rng: &mut impl Rng) -> PointCloud {
    let s = size as f64;
    let mut keep: Box<dyn FnMut([f64; 3]) -> bool> = match kind {
        ShapeKind::Plane => {
            let mut n = [0.0; 3];
            while crate::pointcloud::norm(n) < 1e-3 {
                n = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
            }
            let len = crate::pointcloud::norm(n);
            let n = n.map(|v| v / len);
            let c = [0; 3].map(|_| s / 2.0 + rng.random_range(-s / 8.0..s / 8.0));
            // Thickness max|n_i| gives a gap-free digital plane.
            let half = n.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 2.0;
            let d = crate::pointcloud::dot(n, c);
            Box::new(move |v| (crate::pointcloud::dot(n, v) - d).abs() <= half)
        }
        ShapeKind::Sphere => {
            let r = rng.random_range(s / 6.0..s / 2.5);
            let c =
                [0; 3].map(|_| rng.random_range(r.min(s / 2.0 - 1.0)..(s - r).max(s / 2.0 + 1.0)));
            Box::new(move |v| {
                let d = crate::pointcloud::norm([v[0] - c[0], v[1] - c[1], v[2] - c[2]]);
                (d - r).abs() <= 0.5
            })
        }
        ShapeKind::Box => {
            let mut lo = [0.0; 3];
            let mut hi = [0.0; 3];
            for a in 0..3 {
                let ext = rng.random_range(size / 4..size * 3 / 4).max(2);
                let start = rng.random_range(0..size - ext);
                lo[a] = start as f64;
                hi[a] = (start + ext) as f64;
            }
            Box::new(move |v| {
                let inside = (0..3).all(|a| v[a] >= lo[a] && v[a] <= hi[a]);
                inside && (0..3).any(|a| v[a] == lo[a] || v[a] == hi[a])
            })
        }
    };
    let mut points = Vec::new();
    for z in 0..size {
        for y in 0..size {
            for x in 0..size {
                let v = [x as f64, y as f64, z as f64];
                if keep(v) {
                    points.push(Point::from(v));
                }
            }
        }
    }
    PointCloud::new(points).expect("shape voxels are finite")
}

/// `count` blocks cycling through plane, sphere and box.
pub fn synthetic_dataset(count: usize, size: usize, seed: u64) -> Vec<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| synthetic_block(ShapeKind::ALL[i % 3], size, &mut rng))
        .collect()
}

/// Voxelizes blocks into single-channel training tensors.
pub fn blocks_to_tensors(blocks: &[PointCloud], size: usize, repr: Repr) -> Result<Vec<Tensor4>> {
    let cfg = TdfConfig::default();
    blocks
        .iter()
        .map(|b| voxelize(b, size, repr, &cfg).map(|g| Tensor4::from_grid(&g)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_non_empty_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            for kind in ShapeKind::ALL {
                let pc = synthetic_block(kind, 16, &mut rng);
                assert!(!pc.is_empty(), "{kind:?}");
                let (lo, hi) = pc.bounds().unwrap();
                assert!(lo.iter().all(|&v| v >= 0.0) && hi.iter().all(|&v| v < 16.0));
            }
        }
    }

    #[test]
    fn dataset_is_seeded() {
        assert_eq!(synthetic_dataset(4, 16, 1), synthetic_dataset(4, 16, 1));
    }
}
