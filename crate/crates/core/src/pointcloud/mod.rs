//! Point cloud container, PLY I/O and exact nearest-neighbour search.

mod kdtree;
mod ply;

pub use kdtree::{Neighbor, SpatialIndex};
pub use ply::{read_ply, read_ply_from, write_ply, write_ply_to, PlyFormat};

use crate::error::{Error, Result};

/// Allowed deviation from unit length for stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// A 3D point in voxel units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    #[inline]
    pub fn sub(&self, other: &Point) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let d = self.sub(other);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

impl From<[f64; 3]> for Point {
    fn from(c: [f64; 3]) -> Self {
        Point::new(c[0], c[1], c[2])
    }
}

#[inline]
pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// An ordered list of points with optional unit normals.
///
/// Coordinates are kept as `f64`. An empty cloud can be built (a block
/// partition may legitimately produce one) but every metric rejects it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point>,
    normals: Option<Vec<[f64; 3]>>,
    bit_depth: Option<u32>,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            normals: None,
            bit_depth: None,
        })
    }

    pub fn from_coords<I>(coords: I) -> Result<Self>
    where
        I: IntoIterator<Item = [f64; 3]>,
    {
        Self::new(coords.into_iter().map(Point::from).collect())
    }

    /// Attaches normals. Each one must already be unit length.
    pub fn with_normals(mut self, normals: Vec<[f64; 3]>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let len = norm(*n);
            if !len.is_finite() || (len - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::InvalidArgument(format!(
                    "normal {i} has length {len}, expected 1"
                )));
            }
        }
        self.normals = Some(normals);
        Ok(self)
    }

    pub fn with_bit_depth(mut self, bit_depth: Option<u32>) -> Self {
        self.bit_depth = bit_depth;
        self
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[[f64; 3]]> {
        self.normals.as_deref()
    }

    pub fn bit_depth(&self) -> Option<u32> {
        self.bit_depth
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn without_normals(&self) -> PointCloud {
        PointCloud {
            points: self.points.clone(),
            normals: None,
            bit_depth: self.bit_depth,
        }
    }

    /// Componentwise minimum and maximum, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = self.points.first()?.coords();
        let mut lo = first;
        let mut hi = first;
        for p in &self.points[1..] {
            for (axis, v) in p.coords().into_iter().enumerate() {
                lo[axis] = lo[axis].min(v);
                hi[axis] = hi[axis].max(v);
            }
        }
        Some((lo, hi))
    }

    pub(crate) fn ensure_non_empty(&self, what: &str) -> Result<()> {
        if self.points.is_empty() {
            Err(Error::EmptyInput(format!("{what} has no points")))
        } else {
            Ok(())
        }
    }

    /// Translates every point by `offset`.
    pub fn translated(&self, offset: [f64; 3]) -> PointCloud {
        let points = self
            .points
            .iter()
            .map(|p| Point::new(p.x + offset[0], p.y + offset[1], p.z + offset[2]))
            .collect();
        PointCloud {
            points,
            normals: self.normals.clone(),
            bit_depth: self.bit_depth,
        }
    }
}
