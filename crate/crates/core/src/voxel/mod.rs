//! Block partitioning and voxel grid representations.
//!
//! Points are floor-quantized to voxels. Distances are measured between
//! voxel centers of the occupied binary grid and are computed per block:
//! occupancy in a neighbouring block never affects a block's TDF.

mod grid;
mod partition;

pub use grid::{Repr, VoxelGrid};
pub use partition::{partition_blocks, BlockGrid, BlockOrigin};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::{dot, Point, PointCloud, SpatialIndex};

/// Truncation for distance fields: distances are clamped to `u` and divided
/// by it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdfConfig {
    pub u: f64,
}

impl TdfConfig {
    pub fn new(u: f64) -> Result<Self> {
        if !(u.is_finite() && u >= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "TDF upper bound u = {u} must be >= 1"
            )));
        }
        Ok(Self { u })
    }

    #[inline]
    pub fn normalize(&self, d: f64) -> f64 {
        d.min(self.u) / self.u
    }
}

impl Default for TdfConfig {
    fn default() -> Self {
        Self { u: 5.0 }
    }
}

/// Voxel indices occupied by `block`, as flat x-fastest indices, sorted and
/// deduplicated.
fn occupied_indices(block: &PointCloud, size: usize) -> Result<Vec<usize>> {
    if size == 0 {
        return Err(Error::InvalidArgument("grid size must be positive".into()));
    }
    let limit = size as f64;
    let mut occ = Vec::with_capacity(block.len());
    for (i, p) in block.points().iter().enumerate() {
        let c = p.coords();
        if c.iter().any(|&v| !(0.0..limit).contains(&v)) {
            return Err(Error::InvalidArgument(format!(
                "point {i} ({}, {}, {}) is outside [0, {size})",
                p.x, p.y, p.z
            )));
        }
        let [x, y, z] = c.map(|v| v.floor() as usize);
        occ.push(x + size * (y + size * z));
    }
    occ.sort_unstable();
    occ.dedup();
    Ok(occ)
}

/// Binary occupancy grid: the voxel containing each point is set to 1.
pub fn voxelize_binary(block: &PointCloud, size: usize) -> Result<VoxelGrid> {
    let occ = occupied_indices(block, size)?;
    let mut values = vec![0.0; size * size * size];
    for i in occ {
        values[i] = 1.0;
    }
    Ok(VoxelGrid::from_raw(size, Repr::Binary, values))
}

/// Exact Euclidean distance from every voxel center to the nearest occupied
/// voxel center, in voxel units.
pub fn distance_transform(occ: &VoxelGrid) -> Result<Vec<f64>> {
    if occ.repr() != Repr::Binary {
        return Err(Error::ReprMismatch {
            expected: Repr::Binary,
            found: occ.repr(),
        });
    }
    let centers: Vec<[f64; 3]> = occ
        .values()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(i, _)| occ.coords_of(i).map(|c| c as f64))
        .collect();
    if centers.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let index = SpatialIndex::from_coords(centers);
    Ok((0..occ.len())
        .map(|i| {
            let q = Point::from(occ.coords_of(i).map(|c| c as f64));
            index.nearest(&q).dist2.sqrt()
        })
        .collect())
}

/// Integer offsets within distance `u`, with their squared lengths.
fn ball_offsets(u: f64) -> Vec<([i64; 3], i64)> {
    let r = u.floor() as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = dx * dx + dy * dy + dz * dz;
                if (d2 as f64) <= u * u {
                    out.push(([dx, dy, dz], d2));
                }
            }
        }
    }
    out
}

/// Squared distances to the nearest occupied voxel, exact up to `u` and
/// `None` beyond it.
fn bounded_sq_distances(occ: &[usize], size: usize, u: f64) -> Vec<Option<i64>> {
    let mut d2 = vec![None::<i64>; size * size * size];
    let s = size as i64;
    let offsets = ball_offsets(u);
    for &i in occ {
        let (x, y, z) = (
            (i % size) as i64,
            ((i / size) % size) as i64,
            (i / (size * size)) as i64,
        );
        for &([dx, dy, dz], dd) in &offsets {
            let (vx, vy, vz) = (x + dx, y + dy, z + dz);
            if vx < 0 || vy < 0 || vz < 0 || vx >= s || vy >= s || vz >= s {
                continue;
            }
            let j = (vx + s * (vy + s * vz)) as usize;
            match d2[j] {
                Some(cur) if cur <= dd => {}
                _ => d2[j] = Some(dd),
            }
        }
    }
    d2
}

/// Truncated distance field: `min(d, u) / u` per voxel.
pub fn voxelize_tdf(block: &PointCloud, size: usize, cfg: &TdfConfig) -> Result<VoxelGrid> {
    let occ = occupied_indices(block, size)?;
    if occ.is_empty() {
        return Err(Error::EmptyBlock);
    }
    let values = bounded_sq_distances(&occ, size, cfg.u)
        .into_iter()
        .map(|d2| match d2 {
            Some(d2) => cfg.normalize((d2 as f64).sqrt()),
            None => 1.0,
        })
        .collect();
    Ok(VoxelGrid::from_raw(size, Repr::Tdf, values))
}

/// Truncated signed distance field. The magnitude equals the TDF; the sign
/// is that of `(voxel - p) · n_p` where `p` is the point whose voxel is
/// nearest (lowest point index on ties) and `n_p` its normal. Zero counts
/// as positive.
pub fn voxelize_tsdf(block: &PointCloud, size: usize, cfg: &TdfConfig) -> Result<VoxelGrid> {
    let normals = block
        .normals()
        .ok_or_else(|| Error::InvalidArgument("TSDF needs per-point normals".into()))?;
    let tdf = voxelize_tdf(block, size, cfg)?;
    let quantized: Vec<[f64; 3]> = block
        .points()
        .iter()
        .map(|p| p.coords().map(f64::floor))
        .collect();
    let index = SpatialIndex::from_coords(quantized.clone());
    let values = tdf
        .values()
        .iter()
        .enumerate()
        .map(|(i, &mag)| {
            let v = tdf.coords_of(i).map(|c| c as f64);
            let nn = index.nearest(&Point::from(v)).index;
            let q = quantized[nn];
            let s = dot([v[0] - q[0], v[1] - q[1], v[2] - q[2]], normals[nn]);
            if s < 0.0 {
                -mag
            } else {
                mag
            }
        })
        .collect();
    Ok(VoxelGrid::from_raw(size, Repr::Tsdf, values))
}

/// Grid for a block with no points: all empty, or all "far" for distance
/// fields.
pub fn empty_grid(size: usize, repr: Repr) -> VoxelGrid {
    match repr {
        Repr::Binary => VoxelGrid::filled(size, repr, 0.0),
        Repr::Tdf | Repr::Tsdf => VoxelGrid::filled(size, repr, 1.0),
    }
}

/// Voxelizes a block in the requested representation. Empty blocks yield
/// [`empty_grid`] instead of an error.
pub fn voxelize(block: &PointCloud, size: usize, repr: Repr, cfg: &TdfConfig) -> Result<VoxelGrid> {
    if block.is_empty() {
        return Ok(empty_grid(size, repr));
    }
    match repr {
        Repr::Binary => voxelize_binary(block, size),
        Repr::Tdf => voxelize_tdf(block, size, cfg),
        Repr::Tsdf => voxelize_tsdf(block, size, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(coords: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_coords(coords.iter().copied()).unwrap()
    }

    fn brute_distances(g: &VoxelGrid) -> Vec<f64> {
        let occ: Vec<[usize; 3]> = (0..g.len())
            .filter(|&i| g.values()[i] == 1.0)
            .map(|i| g.coords_of(i))
            .collect();
        (0..g.len())
            .map(|i| {
                let v = g.coords_of(i);
                occ.iter()
                    .map(|o| {
                        let d: Vec<f64> = (0..3).map(|a| v[a] as f64 - o[a] as f64).collect();
                        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
                    })
                    .fold(f64::INFINITY, f64::min)
                    .sqrt()
            })
            .collect()
    }

    fn random_block(rng: &mut ChaCha8Rng, size: usize, n: usize) -> PointCloud {
        let s = size as f64;
        PointCloud::from_coords((0..n).map(|_| {
            [
                rng.random::<f64>() * s,
                rng.random::<f64>() * s,
                rng.random::<f64>() * s,
            ]
        }))
        .unwrap()
    }

    #[test]
    fn binary_single_point() {
        let g = voxelize_binary(&cloud(&[[0.5, 0.5, 0.5]]), 4).unwrap();
        assert_eq!(g.get(0, 0, 0), 1.0);
        assert_eq!(g.occupied_count(), 1);
    }

    #[test]
    fn binary_is_idempotent_and_empty_is_zero() {
        let g = voxelize_binary(&cloud(&[[1.2, 2.0, 3.9], [1.7, 2.5, 3.1]]), 4).unwrap();
        assert_eq!(g.occupied_count(), 1);
        assert_eq!(g.get(1, 2, 3), 1.0);
        let empty = voxelize_binary(&PointCloud::default(), 4).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_rejects_out_of_range() {
        assert!(matches!(
            voxelize_binary(&cloud(&[[4.0, 0.0, 0.0]]), 4),
            Err(Error::InvalidArgument(_))
        ));
        assert!(voxelize_binary(&cloud(&[[-0.1, 0.0, 0.0]]), 4).is_err());
    }

    #[test]
    fn distance_transform_pythagoras() {
        let occ = voxelize_binary(&cloud(&[[0.0, 0.0, 0.0]]), 8).unwrap();
        let d = distance_transform(&occ).unwrap();
        assert_eq!(d[occ.index(3, 4, 0)], 5.0);
        assert_eq!(d[occ.index(0, 0, 0)], 0.0);
    }

    #[test]
    fn distance_transform_errors() {
        let empty = VoxelGrid::filled(4, Repr::Binary, 0.0);
        assert!(matches!(distance_transform(&empty), Err(Error::EmptyBlock)));
        let tdf = VoxelGrid::filled(4, Repr::Tdf, 0.0);
        assert!(distance_transform(&tdf).is_err());
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let block = random_block(&mut rng, 16, 30);
            let occ = voxelize_binary(&block, 16).unwrap();
            assert_eq!(distance_transform(&occ).unwrap(), brute_distances(&occ));
        }
    }

    #[test]
    fn distance_transform_is_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let block = random_block(&mut rng, 12, 10);
        let occ = voxelize_binary(&block, 12).unwrap();
        let d = distance_transform(&occ).unwrap();
        for i in 0..occ.len() {
            let [x, y, z] = occ.coords_of(i);
            for (nx, ny, nz) in [(x + 1, y, z), (x, y + 1, z), (x, y, z + 1)] {
                if nx < 12 && ny < 12 && nz < 12 {
                    assert!((d[i] - d[occ.index(nx, ny, nz)]).abs() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn tdf_values() {
        let cfg = TdfConfig::new(5.0).unwrap();
        let block = cloud(&[[0.0, 0.0, 0.0]]);
        let g = voxelize_tdf(&block, 8, &cfg).unwrap();
        assert_eq!(g.get(0, 0, 0), 0.0);
        assert_eq!(g.get(7, 0, 0), 1.0);
        assert_eq!(g.get(2, 0, 0), 0.4);
        let cfg2 = TdfConfig::new(2.0).unwrap();
        assert_eq!(voxelize_tdf(&block, 8, &cfg2).unwrap().get(1, 0, 0), 0.5);
        assert!(matches!(
            voxelize_tdf(&PointCloud::default(), 8, &cfg),
            Err(Error::EmptyBlock)
        ));
        assert!(TdfConfig::new(0.5).is_err());
    }

    #[test]
    fn tdf_equals_truncated_distance_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for u in [1.0, 2.0, 2.5, 5.0, 7.3] {
            let cfg = TdfConfig::new(u).unwrap();
            let block = random_block(&mut rng, 16, 12);
            let tdf = voxelize_tdf(&block, 16, &cfg).unwrap();
            let occ = voxelize_binary(&block, 16).unwrap();
            let d = distance_transform(&occ).unwrap();
            for i in 0..tdf.len() {
                assert_eq!(tdf.values()[i], d[i].min(u) / u);
                assert_eq!(tdf.values()[i] == 0.0, occ.values()[i] == 1.0);
            }
        }
    }

    #[test]
    fn tsdf_sign_follows_normal() {
        let mut coords = Vec::new();
        for x in 0..8 {
            for y in 0..8 {
                coords.push([x as f64, y as f64, 3.0]);
            }
        }
        let n = coords.len();
        let block = cloud(&coords)
            .with_normals(vec![[0.0, 0.0, 1.0]; n])
            .unwrap();
        let cfg = TdfConfig::new(2.0).unwrap();
        let g = voxelize_tsdf(&block, 8, &cfg).unwrap();
        assert_eq!(g.get(4, 4, 3), 0.0);
        assert_eq!(g.get(4, 4, 4), 0.5);
        assert_eq!(g.get(4, 4, 2), -0.5);
        assert_eq!(g.get(4, 4, 7), 1.0);
        assert_eq!(g.get(4, 4, 0), -1.0);
        assert!(matches!(
            voxelize_tsdf(&cloud(&[[0.0; 3]]), 8, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn tsdf_magnitude_equals_tdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..4 {
            let block = random_block(&mut rng, 16, 20);
            let normals = (0..block.len())
                .map(|_| {
                    let v: [f64; 3] = [
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() - 0.5,
                        rng.random::<f64>() + 0.1,
                    ];
                    let l = crate::pointcloud::norm(v);
                    v.map(|c| c / l)
                })
                .collect();
            let block = block.with_normals(normals).unwrap();
            let cfg = TdfConfig::default();
            let tsdf = voxelize_tsdf(&block, 16, &cfg).unwrap();
            let tdf = voxelize_tdf(&block, 16, &cfg).unwrap();
            for (a, b) in tsdf.values().iter().zip(tdf.values()) {
                assert_eq!(a.abs(), *b);
            }
        }
    }
}
