//! Whole-cloud metrics: block pairing, per-block voxel metrics and the
//! named metric set exposed by the command line.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::autoencoder::{AutoencoderParams, Tensor4};
use crate::error::{Error, Result};
use crate::perceptual::{perceptual_distance, FeatureSelector};
use crate::pointcloud::PointCloud;
use crate::pointset::{
    d1_mse, d2_mse, estimate_normals, geometry_psnr, PsnrConfig, NORMAL_NEIGHBORS,
};
use crate::voxel::{partition_blocks, voxelize, BlockOrigin, Repr, TdfConfig, VoxelGrid};
use crate::voxel_metrics::{self, Aggregation, VoxelMetricConfig};

/// Block partition and distance-field settings shared by all voxel metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    pub block_size: usize,
    pub tdf: TdfConfig,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            block_size: 64,
            tdf: TdfConfig::default(),
        }
    }
}

/// Blocks of two clouds aligned on the same partition. Either side is
/// `None` where that cloud has no point in the block.
#[derive(Debug, Clone)]
pub struct BlockPair {
    pub origin: BlockOrigin,
    pub a: Option<PointCloud>,
    pub b: Option<PointCloud>,
}

impl BlockPair {
    /// Voxelizes both sides; a missing side becomes an empty grid.
    pub fn voxelize(&self, repr: Repr, grid: &GridConfig) -> Result<(VoxelGrid, VoxelGrid)> {
        let empty = PointCloud::default();
        let a = voxelize(
            self.a.as_ref().unwrap_or(&empty),
            grid.block_size,
            repr,
            &grid.tdf,
        )?;
        let b = voxelize(
            self.b.as_ref().unwrap_or(&empty),
            grid.block_size,
            repr,
            &grid.tdf,
        )?;
        Ok((a, b))
    }
}

/// Union of the occupied blocks of `a` and `b`, in origin order.
pub fn paired_blocks(a: &PointCloud, b: &PointCloud, block_size: usize) -> Result<Vec<BlockPair>> {
    a.ensure_non_empty("reference cloud")?;
    b.ensure_non_empty("distorted cloud")?;
    let ga = partition_blocks(a, block_size)?;
    let gb = partition_blocks(b, block_size)?;
    let mut origins: Vec<BlockOrigin> = ga
        .blocks()
        .keys()
        .chain(gb.blocks().keys())
        .copied()
        .collect();
    origins.sort_unstable();
    origins.dedup();
    Ok(origins
        .into_iter()
        .map(|o| BlockPair {
            origin: o,
            a: ga.get(&o).cloned(),
            b: gb.get(&o).cloned(),
        })
        .collect())
}

/// Evaluates `f` on every block pair concurrently and returns the values
/// in origin order.
pub fn per_block<T: Send>(
    pairs: &[BlockPair],
    f: impl Fn(&BlockPair) -> Result<T> + Sync + Send,
) -> Result<Vec<T>> {
    pairs.par_iter().map(f).collect()
}

/// Voxelizes every occupied block of `pc` into a single-channel tensor,
/// in origin order.
pub fn cloud_block_tensors(pc: &PointCloud, repr: Repr, grid: &GridConfig) -> Result<Vec<Tensor4>> {
    let blocks = partition_blocks(pc, grid.block_size)?;
    blocks
        .blocks()
        .values()
        .map(|b| voxelize(b, grid.block_size, repr, &grid.tdf).map(|g| Tensor4::from_grid(&g)))
        .collect()
}

/// Voxel-domain metric of a single block pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockMetric {
    Bce,
    Wbce,
    Nabce,
    TdfMse,
}

impl BlockMetric {
    pub fn repr(self) -> Repr {
        match self {
            BlockMetric::TdfMse => Repr::Tdf,
            _ => Repr::Binary,
        }
    }

    pub fn eval(self, a: &VoxelGrid, b: &VoxelGrid, cfg: &VoxelMetricConfig) -> Result<f64> {
        match self {
            BlockMetric::Bce => voxel_metrics::bce(a, b, &cfg.clip),
            BlockMetric::Wbce => voxel_metrics::wbce(a, b, cfg.alpha, &cfg.clip),
            BlockMetric::Nabce => voxel_metrics::nabce(a, b, cfg),
            BlockMetric::TdfMse => voxel_metrics::tdf_mse(a, b),
        }
    }
}

/// Per-block metric values over the union of occupied blocks.
pub fn block_metric_values(
    a: &PointCloud,
    b: &PointCloud,
    metric: BlockMetric,
    grid: &GridConfig,
    cfg: &VoxelMetricConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let pairs = paired_blocks(a, b, grid.block_size)?;
    per_block(&pairs, |p| {
        let (ga, gb) = p.voxelize(metric.repr(), grid)?;
        metric.eval(&ga, &gb, cfg)
    })
}

/// Aggregated voxel metric between a reference `a` and a distorted `b`.
pub fn block_metric(
    a: &PointCloud,
    b: &PointCloud,
    metric: BlockMetric,
    grid: &GridConfig,
    cfg: &VoxelMetricConfig,
) -> Result<f64> {
    let values = block_metric_values(a, b, metric, grid, cfg)?;
    voxel_metrics::aggregate_blocks(&values, cfg.aggregation)
}

/// The named metrics, one per row of the usual comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricName {
    D1Mse,
    D2Mse,
    D1Psnr,
    D2Psnr,
    BinBce,
    BinWbce,
    BinNabce,
    TdfMse,
    BinPl,
    TdfPl,
}

impl MetricName {
    pub const ALL: [MetricName; 10] = [
        MetricName::D1Mse,
        MetricName::D2Mse,
        MetricName::D1Psnr,
        MetricName::D2Psnr,
        MetricName::BinBce,
        MetricName::BinWbce,
        MetricName::BinNabce,
        MetricName::TdfMse,
        MetricName::BinPl,
        MetricName::TdfPl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::D1Mse => "d1-mse",
            MetricName::D2Mse => "d2-mse",
            MetricName::D1Psnr => "d1-psnr",
            MetricName::D2Psnr => "d2-psnr",
            MetricName::BinBce => "bin-bce",
            MetricName::BinWbce => "bin-wbce",
            MetricName::BinNabce => "bin-nabce",
            MetricName::TdfMse => "tdf-mse",
            MetricName::BinPl => "bin-pl",
            MetricName::TdfPl => "tdf-pl",
        }
    }

    /// Block aggregation used when none is given: L2 for WBCE, L1 otherwise.
    pub fn default_aggregation(self) -> Aggregation {
        match self {
            MetricName::BinWbce => Aggregation::L2,
            _ => Aggregation::L1,
        }
    }

    pub fn is_perceptual(self) -> bool {
        matches!(self, MetricName::BinPl | MetricName::TdfPl)
    }

    /// Representation of the grids the metric is computed on, if any.
    pub fn repr(self) -> Option<Repr> {
        match self {
            MetricName::BinBce | MetricName::BinWbce | MetricName::BinNabce | MetricName::BinPl => {
                Some(Repr::Binary)
            }
            MetricName::TdfMse | MetricName::TdfPl => Some(Repr::Tdf),
            _ => None,
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric '{s}'")))
    }
}

/// Everything a named metric may need besides the two clouds.
#[derive(Debug, Clone, Default)]
pub struct MetricOptions {
    pub grid: GridConfig,
    /// `aggregation` is overridden by the metric's default unless
    /// `aggregation_override` is set.
    pub voxel: VoxelMetricConfig,
    pub aggregation_override: Option<Aggregation>,
    /// Peak for PSNR; derived from the reference when absent.
    pub psnr: Option<PsnrConfig>,
    pub weights: Option<AutoencoderParams>,
    pub feature: FeatureSelector,
}

impl MetricOptions {
    pub fn aggregation_for(&self, metric: MetricName) -> Aggregation {
        self.aggregation_override
            .unwrap_or(metric.default_aggregation())
    }
}

/// Attaches estimated normals when the cloud has none.
pub fn with_normals(pc: &PointCloud) -> Result<PointCloud> {
    if pc.normals().is_some() {
        return Ok(pc.clone());
    }
    Ok(estimate_normals(pc, NORMAL_NEIGHBORS.min(pc.len()))?.cloud)
}

/// Computes a named metric between reference `a` and distorted `b`.
pub fn compute_metric(
    a: &PointCloud,
    b: &PointCloud,
    metric: MetricName,
    opts: &MetricOptions,
) -> Result<f64> {
    let agg = opts.aggregation_for(metric);
    let voxel = VoxelMetricConfig {
        aggregation: agg,
        ..opts.voxel
    };
    let psnr = || -> Result<PsnrConfig> {
        match opts.psnr {
            Some(p) => Ok(p),
            None => PsnrConfig::for_reference(a),
        }
    };
    match metric {
        MetricName::D1Mse => d1_mse(a, b),
        MetricName::D2Mse => d2_mse(&with_normals(a)?, &with_normals(b)?),
        MetricName::D1Psnr => geometry_psnr(d1_mse(a, b)?, &psnr()?),
        MetricName::D2Psnr => {
            geometry_psnr(d2_mse(&with_normals(a)?, &with_normals(b)?)?, &psnr()?)
        }
        MetricName::BinBce => block_metric(a, b, BlockMetric::Bce, &opts.grid, &voxel),
        MetricName::BinWbce => block_metric(a, b, BlockMetric::Wbce, &opts.grid, &voxel),
        MetricName::BinNabce => block_metric(a, b, BlockMetric::Nabce, &opts.grid, &voxel),
        MetricName::TdfMse => block_metric(a, b, BlockMetric::TdfMse, &opts.grid, &voxel),
        MetricName::BinPl | MetricName::TdfPl => {
            let params = opts.weights.as_ref().ok_or_else(|| {
                Error::InvalidArgument(format!("{metric} needs autoencoder weights"))
            })?;
            params.ensure_repr(metric.repr().expect("perceptual metrics have a repr"))?;
            perceptual_distance(a, b, params, opts.feature, agg, &opts.grid)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(coords: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_coords(coords.iter().copied()).unwrap()
    }

    #[test]
    fn union_of_blocks() {
        let a = cloud(&[[1.0, 1.0, 1.0], [9.0, 1.0, 1.0]]);
        let b = cloud(&[[1.0, 1.0, 1.0], [1.0, 9.0, 1.0]]);
        let pairs = paired_blocks(&a, &b, 8).unwrap();
        let origins: Vec<_> = pairs.iter().map(|p| p.origin).collect();
        assert_eq!(origins, vec![[0, 0, 0], [0, 8, 0], [8, 0, 0]]);
        assert!(pairs[1].a.is_none() && pairs[1].b.is_some());
        assert!(pairs[2].a.is_some() && pairs[2].b.is_none());
    }

    #[test]
    fn missing_block_counts_as_empty() {
        let a = cloud(&[[1.0, 1.0, 1.0], [9.0, 1.0, 1.0]]);
        let b = cloud(&[[1.0, 1.0, 1.0]]);
        let grid = GridConfig {
            block_size: 8,
            ..GridConfig::default()
        };
        let cfg = VoxelMetricConfig::default();
        let vals = block_metric_values(&a, &b, BlockMetric::TdfMse, &grid, &cfg).unwrap();
        assert_eq!(vals.len(), 2);
        assert_eq!(vals[0], 0.0);
        assert!(vals[1] > 0.0);
    }

    #[test]
    fn identical_clouds_score_zero() {
        let a = cloud(&[
            [1.0, 2.0, 3.0],
            [4.0, 4.0, 4.0],
            [5.0, 1.0, 2.0],
            [2.0, 6.0, 1.0],
        ]);
        let opts = MetricOptions {
            grid: GridConfig {
                block_size: 8,
                ..GridConfig::default()
            },
            ..MetricOptions::default()
        };
        for m in [MetricName::D1Mse, MetricName::TdfMse] {
            assert_eq!(compute_metric(&a, &a, m, &opts).unwrap(), 0.0, "{m}");
        }
        assert_eq!(
            compute_metric(&a, &a, MetricName::D1Psnr, &opts).unwrap(),
            f64::INFINITY
        );
        assert!(matches!(
            compute_metric(&a, &a, MetricName::TdfPl, &opts),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn metric_names_round_trip() {
        for m in MetricName::ALL {
            assert_eq!(m.as_str().parse::<MetricName>().unwrap(), m);
        }
        assert!("d3-mse".parse::<MetricName>().is_err());
        assert_eq!(MetricName::BinWbce.default_aggregation(), Aggregation::L2);
        assert_eq!(MetricName::TdfPl.default_aggregation(), Aggregation::L1);
    }
}
