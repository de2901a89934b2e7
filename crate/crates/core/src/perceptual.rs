//! Perceptual loss: MSE between the latent feature maps the analysis
//! transform produces for two clouds, block by block.

use std::fmt;
use std::str::FromStr;

use crate::autoencoder::{analysis_forward, AutoencoderParams, Tensor4};
use crate::error::{Error, Result};
use crate::eval::pearson;
use crate::pipeline::{paired_blocks, per_block, GridConfig};
use crate::pointcloud::PointCloud;
use crate::voxel_metrics::{aggregate_blocks, Aggregation};

/// Latent values of a feature map must spread at least this much over the
/// probe set for the map to count as used.
pub const UNUSED_TOLERANCE: f64 = 1e-9;

/// Which latent feature maps enter the distance. Indices are 0-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureSelector {
    #[default]
    All,
    Single(usize),
}

impl FeatureSelector {
    fn check(self, channels: usize) -> Result<()> {
        match self {
            FeatureSelector::Single(k) if k >= channels => Err(Error::InvalidArgument(format!(
                "feature map {k} out of range (latent has {channels})"
            ))),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FeatureSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureSelector::All => f.write_str("all"),
            FeatureSelector::Single(k) => write!(f, "{k}"),
        }
    }
}

impl FromStr for FeatureSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "all" {
            return Ok(FeatureSelector::All);
        }
        s.parse().map(FeatureSelector::Single).map_err(|_| {
            Error::InvalidArgument(format!(
                "feature selector '{s}' is neither 'all' nor an index"
            ))
        })
    }
}

/// Mean squared difference over the selected feature maps.
pub fn latent_mse(ya: &Tensor4, yb: &Tensor4, sel: FeatureSelector) -> Result<f64> {
    ya.same_shape(yb)?;
    sel.check(ya.channels())?;
    let (a, b) = match sel {
        FeatureSelector::All => (ya.data(), yb.data()),
        FeatureSelector::Single(k) => (ya.channel(k), yb.channel(k)),
    };
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Per-block latent pairs `(f_a(A), f_a(B))` over the union of blocks.
fn block_latents(
    a: &PointCloud,
    b: &PointCloud,
    params: &AutoencoderParams,
    grid: &GridConfig,
) -> Result<Vec<(Tensor4, Tensor4)>> {
    if !grid.block_size.is_multiple_of(8) {
        return Err(Error::InvalidArgument(format!(
            "block size {} is not a multiple of 8",
            grid.block_size
        )));
    }
    let pairs = paired_blocks(a, b, grid.block_size)?;
    per_block(&pairs, |p| {
        let (ga, gb) = p.voxelize(params.repr, grid)?;
        Ok((
            analysis_forward(&Tensor4::from_grid(&ga), params)?,
            analysis_forward(&Tensor4::from_grid(&gb), params)?,
        ))
    })
}

/// Perceptual distance between reference `a` and distorted `b`: the
/// latent MSE of every block, aggregated over blocks.
pub fn perceptual_distance(
    a: &PointCloud,
    b: &PointCloud,
    params: &AutoencoderParams,
    sel: FeatureSelector,
    agg: Aggregation,
    grid: &GridConfig,
) -> Result<f64> {
    sel.check(params.latent_channels())?;
    let latents = block_latents(a, b, params, grid)?;
    let values = latents
        .iter()
        .map(|(ya, yb)| latent_mse(ya, yb, sel))
        .collect::<Result<Vec<_>>>()?;
    aggregate_blocks(&values, agg)
}

/// [`perceptual_distance`] for every single feature map at once.
pub fn perceptual_distance_per_feature(
    a: &PointCloud,
    b: &PointCloud,
    params: &AutoencoderParams,
    agg: Aggregation,
    grid: &GridConfig,
) -> Result<Vec<f64>> {
    let latents = block_latents(a, b, params, grid)?;
    (0..params.latent_channels())
        .map(|k| {
            let values = latents
                .iter()
                .map(|(ya, yb)| latent_mse(ya, yb, FeatureSelector::Single(k)))
                .collect::<Result<Vec<_>>>()?;
            aggregate_blocks(&values, agg)
        })
        .collect()
}

/// Which latent feature maps vary over a probe set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureUsageReport {
    pub used: Vec<bool>,
    /// `(min, max)` of each map over all probe blocks and positions.
    pub ranges: Vec<(f64, f64)>,
}

impl FeatureUsageReport {
    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }

    pub fn unused(&self) -> Vec<usize> {
        (0..self.used.len()).filter(|&k| !self.used[k]).collect()
    }
}

/// Flags feature maps whose latent values span less than
/// [`UNUSED_TOLERANCE`] across all probe blocks.
pub fn detect_unused_features(
    params: &AutoencoderParams,
    probe: &[Tensor4],
) -> Result<FeatureUsageReport> {
    if probe.is_empty() {
        return Err(Error::EmptyInput("probe set has no blocks".into()));
    }
    let f = params.latent_channels();
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); f];
    let latents = probe
        .iter()
        .map(|x| analysis_forward(x, params))
        .collect::<Result<Vec<_>>>()?;
    for y in &latents {
        for (k, r) in ranges.iter_mut().enumerate() {
            for &v in y.channel(k) {
                r.0 = r.0.min(v);
                r.1 = r.1.max(v);
            }
        }
    }
    let used = ranges
        .iter()
        .map(|(lo, hi)| hi - lo >= UNUSED_TOLERANCE)
        .collect();
    Ok(FeatureUsageReport { used, ranges })
}

/// Index of the feature map whose per-stimulus scores correlate best
/// (largest |PCC|) with `mos`. `scores[i][k]` is map `k` on stimulus `i`.
/// Maps flagged unused, or constant over the stimuli, are skipped; ties go
/// to the lowest index.
pub fn select_best_feature(
    scores: &[Vec<f64>],
    mos: &[f64],
    usage: Option<&FeatureUsageReport>,
) -> Result<usize> {
    if scores.len() < 2 || scores.len() != mos.len() {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 stimuli with one MOS each, got {} score rows and {} MOS",
            scores.len(),
            mos.len()
        )));
    }
    if mos.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "MOS contains non-finite values".into(),
        ));
    }
    let f = scores[0].len();
    if scores.iter().any(|row| row.len() != f) {
        return Err(Error::ShapeMismatch(
            "score rows differ in feature count".into(),
        ));
    }
    if let Some(u) = usage {
        if u.len() != f {
            return Err(Error::ShapeMismatch(format!(
                "usage report has {} maps, scores have {f}",
                u.len()
            )));
        }
    }
    let mut best: Option<(usize, f64)> = None;
    for k in 0..f {
        if usage.is_some_and(|u| !u.used[k]) {
            continue;
        }
        let column: Vec<f64> = scores.iter().map(|row| row[k]).collect();
        let r = match pearson(&column, mos) {
            Ok(r) => r.abs(),
            Err(Error::DegenerateInput(_)) => continue,
            Err(e) => return Err(e),
        };
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((k, r));
        }
    }
    best.map(|(k, _)| k).ok_or(Error::NoUsableFeature)
}
