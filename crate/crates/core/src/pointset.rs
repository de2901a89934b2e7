//! Point-to-point (D1) and point-to-plane (D2) geometry distortion, their
//! PSNR, and normal estimation by local quadric fitting.

use nalgebra::{DMatrix, DVector, Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pointcloud::{dot, norm, PointCloud, SpatialIndex};

/// Default neighbourhood size for normal estimation (the query point
/// included).
pub const NORMAL_NEIGHBORS: usize = 9;

/// Relative singular value below which a quadric fit counts as rank
/// deficient.
const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsnrConfig {
    /// Point cloud resolution in voxel units; the PSNR peak is three times
    /// this value.
    pub resolution: f64,
}

impl PsnrConfig {
    pub fn new(resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} must be > 0"
            )));
        }
        Ok(Self { resolution })
    }

    /// `2^bit_depth - 1` when the reference carries a bit depth, otherwise
    /// its largest bounding-box edge.
    pub fn for_reference(reference: &PointCloud) -> Result<Self> {
        if let Some(b) = reference.bit_depth() {
            return Self::new(2f64.powi(b as i32) - 1.0);
        }
        let (lo, hi) = reference
            .bounds()
            .ok_or_else(|| Error::EmptyInput("reference has no points".into()))?;
        let edge = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
        Self::new(edge)
    }

    pub fn peak(&self) -> f64 {
        3.0 * self.resolution
    }
}

/// PSNR in dB, `10 log10(peak² / mse)`. Zero error gives `+inf`.
pub fn geometry_psnr(mse: f64, cfg: &PsnrConfig) -> Result<f64> {
    if !(mse >= 0.0) {
        return Err(Error::InvalidArgument(format!("mse {mse} must be >= 0")));
    }
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = cfg.peak();
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Output of [`estimate_normals`].
#[derive(Debug, Clone)]
pub struct NormalEstimate {
    /// The input points with unit normals attached.
    pub cloud: PointCloud,
    /// `true` where the quadric fit was rank deficient and the plane
    /// (covariance) normal was used instead.
    pub fallback: Vec<bool>,
}

impl NormalEstimate {
    pub fn fallback_count(&self) -> usize {
        self.fallback.iter().filter(|&&f| f).count()
    }
}

/// Estimates a unit normal per point from a height-field quadric
/// `w = a u² + b uv + c v² + d u + e v + f` fit over the `k` nearest
/// neighbours (the point itself included), expressed in the local frame of
/// the neighbourhood covariance. Normals point away from the neighbourhood
/// centroid.
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<NormalEstimate> {
    pc.ensure_non_empty("cloud")?;
    if k < 3 || k > pc.len() {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs 3 <= k <= {} (got {k})",
            pc.len()
        )));
    }
    let index = SpatialIndex::build(pc)?;
    let pts = pc.points();
    let results: Vec<([f64; 3], bool)> = pts
        .par_iter()
        .map(|p| {
            let nn = index.nearest_neighbors(p, k).expect("k checked above");
            let hood: Vec<[f64; 3]> = nn.iter().map(|n| pts[n.index].coords()).collect();
            local_normal(p.coords(), &hood)
        })
        .collect();
    let (normals, fallback): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let cloud = pc.without_normals().with_normals(normals)?;
    Ok(NormalEstimate { cloud, fallback })
}

fn local_normal(p: [f64; 3], hood: &[[f64; 3]]) -> ([f64; 3], bool) {
    let n = hood.len() as f64;
    let mut c = [0.0; 3];
    for q in hood {
        for a in 0..3 {
            c[a] += q[a] / n;
        }
    }
    let mut cov = Matrix3::zeros();
    for q in hood {
        let d = Vector3::new(q[0] - c[0], q[1] - c[1], q[2] - c[2]);
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let axis = |i: usize| -> [f64; 3] {
        let v = eig.eigenvectors.column(order[i]);
        [v[0], v[1], v[2]]
    };
    let (e1, e2, e3) = (axis(0), axis(1), axis(2));

    let (normal, fallback) = match fit_quadric_gradient(p, hood, e1, e2, e3) {
        Some((du, dv)) => {
            let v = [
                e3[0] - du * e1[0] - dv * e2[0],
                e3[1] - du * e1[1] - dv * e2[1],
                e3[2] - du * e1[2] - dv * e2[2],
            ];
            (v, false)
        }
        None => (e3, true),
    };
    let len = norm(normal);
    let mut normal = if len > 0.0 && len.is_finite() {
        normal.map(|v| v / len)
    } else {
        [0.0, 0.0, 1.0]
    };
    orient_outward(&mut normal, p, c);
    (normal, fallback)
}

/// Slopes `(dw/du, dw/dv)` of the fitted quadric at the query point, or
/// `None` when the least-squares system is rank deficient.
fn fit_quadric_gradient(
    p: [f64; 3],
    hood: &[[f64; 3]],
    e1: [f64; 3],
    e2: [f64; 3],
    e3: [f64; 3],
) -> Option<(f64, f64)> {
    if hood.len() < 6 {
        return None;
    }
    let local: Vec<[f64; 3]> = hood
        .iter()
        .map(|q| {
            let d = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
            [dot(d, e1), dot(d, e2), dot(d, e3)]
        })
        .collect();
    let scale = local
        .iter()
        .map(|l| l[0].abs().max(l[1].abs()))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return None;
    }
    let rows = local.len();
    let design = DMatrix::from_fn(rows, 6, |r, col| {
        let (u, v) = (local[r][0] / scale, local[r][1] / scale);
        match col {
            0 => u * u,
            1 => u * v,
            2 => v * v,
            3 => u,
            4 => v,
            _ => 1.0,
        }
    });
    let rhs = DVector::from_iterator(rows, local.iter().map(|l| l[2] / scale));
    let svd = design.svd(true, true);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv / max_sv < RANK_TOLERANCE {
        return None;
    }
    let coef = svd.solve(&rhs, 0.0).ok()?;
    // Both u and w were scaled by the same factor, so slopes are unchanged.
    Some((coef[3], coef[4]))
}

fn orient_outward(n: &mut [f64; 3], p: [f64; 3], centroid: [f64; 3]) {
    let out = [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]];
    let s = dot(*n, out);
    let flip = if s.abs() > 1e-12 * norm(out).max(1.0) {
        s < 0.0
    } else {
        // No preferred side: make the first significant component positive.
        n.iter().find(|c| c.abs() > 1e-12).is_some_and(|&c| c < 0.0)
    };
    if flip {
        *n = n.map(|c| -c);
    }
}

/// One-directional D1 error: mean squared distance from each point of `a`
/// to its nearest neighbour in `b`.
pub fn directed_d1(a: &PointCloud, b_index: &SpatialIndex) -> f64 {
    let d: Vec<f64> = a
        .points()
        .par_iter()
        .map(|p| b_index.nearest(p).dist2)
        .collect();
    d.iter().sum::<f64>() / a.len() as f64
}

/// One-directional D2 error: the error vector to the nearest neighbour in
/// `b`, projected on the normal of the point in `a`, squared and averaged.
pub fn directed_d2(a: &PointCloud, b: &PointCloud, b_index: &SpatialIndex) -> Result<f64> {
    let normals = a
        .normals()
        .ok_or_else(|| Error::InvalidArgument("D2 needs normals on both clouds".into()))?;
    let d: Vec<f64> = a
        .points()
        .par_iter()
        .zip(normals.par_iter())
        .map(|(p, n)| {
            let q = b.points()[b_index.nearest(p).index];
            let e = dot(p.sub(&q), *n);
            e * e
        })
        .collect();
    Ok(d.iter().sum::<f64>() / a.len() as f64)
}

/// Symmetric point-to-point MSE: `max(e(A, B), e(B, A))`.
pub fn d1_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    a.ensure_non_empty("cloud A")?;
    b.ensure_non_empty("cloud B")?;
    let ia = SpatialIndex::build(a)?;
    let ib = SpatialIndex::build(b)?;
    Ok(directed_d1(a, &ib).max(directed_d1(b, &ia)))
}

/// Symmetric point-to-plane MSE. Each direction uses the normals of the
/// cloud whose points are measured, so both clouds need normals.
pub fn d2_mse(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    a.ensure_non_empty("cloud A")?;
    b.ensure_non_empty("cloud B")?;
    if a.normals().is_none() || b.normals().is_none() {
        return Err(Error::InvalidArgument(
            "D2 needs normals on both clouds".into(),
        ));
    }
    let ia = SpatialIndex::build(a)?;
    let ib = SpatialIndex::build(b)?;
    Ok(directed_d2(a, b, &ib)?.max(directed_d2(b, a, &ia)?))
}
