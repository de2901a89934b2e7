use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pointcloud::{Point, PointCloud};

/// Integer block origin (a multiple of the block size on every axis).
pub type BlockOrigin = [i64; 3];

/// A point cloud split into cubic blocks. Each block stores its points in
/// local coordinates, i.e. relative to the block origin.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrid {
    block_size: usize,
    blocks: BTreeMap<BlockOrigin, PointCloud>,
}

impl BlockGrid {
    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn blocks(&self) -> &BTreeMap<BlockOrigin, PointCloud> {
        &self.blocks
    }

    pub fn get(&self, origin: &BlockOrigin) -> Option<&PointCloud> {
        self.blocks.get(origin)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Reassembles the cloud in global coordinates, block by block.
    pub fn merge(&self) -> PointCloud {
        let mut points = Vec::new();
        for (origin, local) in &self.blocks {
            points.extend(local.points().iter().map(|p| {
                Point::new(
                    p.x + origin[0] as f64,
                    p.y + origin[1] as f64,
                    p.z + origin[2] as f64,
                )
            }));
        }
        PointCloud::new(points).expect("finite coordinates stay finite")
    }
}

/// Assigns every point to the block `floor(p / block_size) * block_size`.
pub fn partition_blocks(pc: &PointCloud, block_size: usize) -> Result<BlockGrid> {
    if block_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "block size {block_size} < 2"
        )));
    }
    let bs = block_size as f64;
    let mut members: BTreeMap<BlockOrigin, Vec<usize>> = BTreeMap::new();
    for (i, p) in pc.points().iter().enumerate() {
        if p.x < 0.0 || p.y < 0.0 || p.z < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "point {i} ({}, {}, {}) has a negative coordinate",
                p.x, p.y, p.z
            )));
        }
        let origin = p
            .coords()
            .map(|c| (c / bs).floor() as i64 * block_size as i64);
        members.entry(origin).or_default().push(i);
    }

    let normals = pc.normals();
    let mut blocks = BTreeMap::new();
    for (origin, idx) in members {
        let o = origin.map(|c| c as f64);
        let local: Vec<Point> = idx
            .iter()
            .map(|&i| {
                let p = pc.points()[i];
                let mut l = [p.x - o[0], p.y - o[1], p.z - o[2]];
                // Guard against rounding pushing a point onto the upper face.
                for c in &mut l {
                    if *c >= bs {
                        *c = bs.next_down();
                    }
                }
                Point::from(l)
            })
            .collect();
        let mut cloud = PointCloud::new(local)?.with_bit_depth(pc.bit_depth());
        if let Some(n) = normals {
            cloud = cloud.with_normals(idx.iter().map(|&i| n[i]).collect())?;
        }
        blocks.insert(origin, cloud);
    }
    Ok(BlockGrid { block_size, blocks })
}
