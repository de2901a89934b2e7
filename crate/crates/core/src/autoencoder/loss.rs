use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};
use crate::voxel_metrics::{focal_term, Clip};

/// Bounding factor of the adaptive MSE class weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveMseConfig {
    pub beta: f64,
}

impl Default for AdaptiveMseConfig {
    fn default() -> Self {
        Self { beta: 0.01 }
    }
}

impl AdaptiveMseConfig {
    pub fn new(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "beta must lie in (0, 0.5), got {beta}"
            )));
        }
        Ok(Self { beta })
    }
}

/// Class weight: share of voxels closer than the truncation distance,
/// clamped to `[beta, 1 - beta]`.
pub fn adaptive_weight(xa: &[f64], cfg: &AdaptiveMseConfig) -> f64 {
    let near = xa.iter().filter(|&&v| v < 1.0).count();
    (near as f64 / xa.len() as f64).clamp(cfg.beta, 1.0 - cfg.beta)
}

/// MSE in which far voxels (`x_A == 1`) are weighted by `w` and the others
/// by `1 - w`. Returns the loss and its gradient with respect to `xb`.
pub fn adaptive_mse_loss(
    xa: &Tensor4,
    xb: &Tensor4,
    cfg: &AdaptiveMseConfig,
) -> Result<(f64, Tensor4)> {
    xa.same_shape(xb)?;
    let n = xa.len() as f64;
    let w = adaptive_weight(xa.data(), cfg);
    let mut grad = Tensor4::zeros(xb.channels(), xb.dims());
    let mut loss = 0.0;
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(xa.data()).zip(xb.data()) {
        let weight = if a == 1.0 { w } else { 1.0 - w };
        let e = a - b;
        loss += weight * e * e;
        *g = 2.0 * weight * (b - a) / n;
    }
    Ok((loss / n, grad))
}

/// Focal-loss training parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalConfig {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            gamma: 2.0,
        }
    }
}

/// Summed focal loss and its gradient with respect to the predicted
/// probabilities `xb`.
pub fn focal_loss_grad(
    xa: &Tensor4,
    xb: &Tensor4,
    cfg: &FocalConfig,
    clip: &Clip,
) -> Result<(f64, Tensor4)> {
    xa.same_shape(xb)?;
    let mut grad = Tensor4::zeros(xb.channels(), xb.dims());
    let mut loss = 0.0;
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(xa.data()).zip(xb.data()) {
        let (l, d) = focal_term(a, b, cfg.alpha, cfg.gamma, clip);
        loss += l;
        *g = d;
    }
    Ok((loss, grad))
}
