//! Voxel-grid quality metrics: (weighted) binary cross entropy, focal loss,
//! neighborhood-adaptive BCE and MSE on truncated distance fields, plus the
//! block aggregation used to turn per-block values into one score.
//!
//! `A` is always the reference grid and `B` the distorted (or predicted) one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::voxel::{Repr, VoxelGrid};

/// Bounds applied to every `log` argument.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Clip {
    fn default() -> Self {
        Self {
            lo: 0.001,
            hi: 0.999,
        }
    }
}

impl Clip {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip bounds [{lo}, {hi}] are invalid"
            )));
        }
        Ok(Self { lo, hi })
    }

    #[inline]
    pub fn log(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi).ln()
    }

    /// Derivative of [`Clip::log`]; zero where the clamp is active.
    #[inline]
    pub fn dlog(&self, v: f64) -> f64 {
        if v > self.lo && v < self.hi {
            1.0 / v
        } else {
            0.0
        }
    }
}

/// How per-block values are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of the values.
    L1,
    /// Root mean square of the values.
    L2,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::L1 => "l1",
            Aggregation::L2 => "l2",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Aggregation::L1),
            "l2" => Ok(Aggregation::L2),
            other => Err(Error::InvalidArgument(format!(
                "unknown aggregation '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelMetricConfig {
    /// Balancing weight in (0, 1).
    pub alpha: f64,
    /// Focal exponent, non-negative.
    pub gamma: f64,
    pub clip: Clip,
    /// naBCE window edge length (odd).
    pub nabce_window: usize,
    pub aggregation: Aggregation,
}

impl Default for VoxelMetricConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            gamma: 2.0,
            clip: Clip::default(),
            nabce_window: 5,
            aggregation: Aggregation::L1,
        }
    }
}

impl VoxelMetricConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha = {} outside (0, 1)",
                self.alpha
            )));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma = {} must be >= 0",
                self.gamma
            )));
        }
        Clip::new(self.clip.lo, self.clip.hi)?;
        if self.nabce_window == 0 || self.nabce_window.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "naBCE window {} must be odd and positive",
                self.nabce_window
            )));
        }
        Ok(())
    }
}

fn check_same_size(a: &VoxelGrid, b_len: usize) -> Result<()> {
    if a.len() != b_len {
        return Err(Error::ShapeMismatch(format!(
            "{} voxels vs {b_len}",
            a.len()
        )));
    }
    Ok(())
}

fn require_repr(g: &VoxelGrid, repr: Repr) -> Result<()> {
    if g.repr() != repr {
        return Err(Error::InvalidArgument(format!(
            "expected a {repr} grid, got {}",
            g.repr()
        )));
    }
    Ok(())
}

/// Per-voxel cross-entropy term `-(w a log b + (1-w)(1-a) log(1-b))`.
#[inline]
fn weighted_ce(a: f64, b: f64, w: f64, clip: &Clip) -> f64 {
    -(w * a * clip.log(b) + (1.0 - w) * (1.0 - a) * clip.log(1.0 - b))
}

/// Weighted binary cross entropy, averaged over voxels.
pub fn wbce(a: &VoxelGrid, b: &VoxelGrid, alpha: f64, clip: &Clip) -> Result<f64> {
    require_repr(a, Repr::Binary)?;
    require_repr(b, Repr::Binary)?;
    check_same_size(a, b.len())?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&xa, &xb)| weighted_ce(xa, xb, alpha, clip))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Binary cross entropy: [`wbce`] with `alpha = 0.5`.
pub fn bce(a: &VoxelGrid, b: &VoxelGrid, clip: &Clip) -> Result<f64> {
    wbce(a, b, 0.5, clip)
}

/// Modulating factor `base^gamma`. Hard predictions (exactly 0 or 1) carry
/// no modulation, so on binary grids the focal loss reduces to the weighted
/// cross entropy for every gamma.
#[inline]
fn modulation(prediction: f64, base: f64, gamma: f64) -> f64 {
    if prediction == 0.0 || prediction == 1.0 {
        1.0
    } else {
        base.powf(gamma)
    }
}

/// Focal loss term for one voxel and its derivative with respect to the
/// prediction `b`.
#[inline]
pub(crate) fn focal_term(a: f64, b: f64, alpha: f64, gamma: f64, clip: &Clip) -> (f64, f64) {
    let hard = b == 0.0 || b == 1.0;
    let pos_mod = modulation(b, 1.0 - b, gamma);
    let neg_mod = modulation(b, b, gamma);
    let log_b = clip.log(b);
    let log_nb = clip.log(1.0 - b);
    let loss = -(alpha * a * pos_mod * log_b + (1.0 - alpha) * (1.0 - a) * neg_mod * log_nb);

    // d/db (1-b)^g = -g (1-b)^(g-1); d/db b^g = g b^(g-1)
    let (dpos_mod, dneg_mod) = if hard || gamma == 0.0 {
        (0.0, 0.0)
    } else {
        (
            -gamma * (1.0 - b).powf(gamma - 1.0),
            gamma * b.powf(gamma - 1.0),
        )
    };
    let dlog_b = clip.dlog(b);
    let dlog_nb = -clip.dlog(1.0 - b);
    let grad = -(alpha * a * (dpos_mod * log_b + pos_mod * dlog_b)
        + (1.0 - alpha) * (1.0 - a) * (dneg_mod * log_nb + neg_mod * dlog_nb));
    (loss, grad)
}

/// Focal loss summed over voxels (no `1/N` factor). `b` holds occupancy
/// probabilities in [0, 1], laid out like `a`.
pub fn focal_loss(a: &VoxelGrid, b: &[f64], cfg: &VoxelMetricConfig) -> Result<f64> {
    require_repr(a, Repr::Binary)?;
    check_same_size(a, b.len())?;
    if let Some(i) = b.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!(
            "prediction {} at {i} is not a probability",
            b[i]
        )));
    }
    Ok(a.values()
        .iter()
        .zip(b)
        .map(|(&xa, &xb)| focal_term(xa, xb, cfg.alpha, cfg.gamma, &cfg.clip).0)
        .sum())
}

/// Neighborhood resemblance: for every voxel, the sum of inverse distances
/// to the voxels of its `m³` window (truncated at the grid border) sharing
/// its occupancy.
pub fn neighborhood_resemblance(a: &VoxelGrid, window: usize) -> Vec<f64> {
    let s = a.size() as i64;
    let h = (window / 2) as i64;
    let mut offsets = Vec::new();
    for dz in -h..=h {
        for dy in -h..=h {
            for dx in -h..=h {
                if (dx, dy, dz) != (0, 0, 0) {
                    let inv = 1.0 / ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    offsets.push((dx, dy, dz, inv));
                }
            }
        }
    }
    let vals = a.values();
    (0..a.len())
        .map(|i| {
            let [x, y, z] = a.coords_of(i).map(|c| c as i64);
            let occ = vals[i];
            let mut r = 0.0;
            for &(dx, dy, dz, inv) in &offsets {
                let (nx, ny, nz) = (x + dx, y + dy, z + dz);
                if nx < 0 || ny < 0 || nz < 0 || nx >= s || ny >= s || nz >= s {
                    continue;
                }
                if vals[(nx + s * (ny + s * nz)) as usize] == occ {
                    r += inv;
                }
            }
            r
        })
        .collect()
}

/// Per-voxel naBCE weights `max(1 - r_u / max(r), 0.001)`, from grid `a`.
pub fn nabce_weights(a: &VoxelGrid, window: usize) -> Vec<f64> {
    let r = neighborhood_resemblance(a, window);
    let max_r = r.iter().copied().fold(0.0, f64::max);
    if max_r == 0.0 {
        return vec![1.0; r.len()];
    }
    r.into_iter()
        .map(|ru| (1.0 - ru / max_r).max(0.001))
        .collect()
}

/// Neighborhood-adaptive BCE: WBCE with a per-voxel weight derived from the
/// occupancy pattern of the reference grid `a`.
pub fn nabce(a: &VoxelGrid, b: &VoxelGrid, cfg: &VoxelMetricConfig) -> Result<f64> {
    require_repr(a, Repr::Binary)?;
    require_repr(b, Repr::Binary)?;
    check_same_size(a, b.len())?;
    let w = nabce_weights(a, cfg.nabce_window);
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .zip(&w)
        .map(|((&xa, &xb), &wu)| weighted_ce(xa, xb, wu, &cfg.clip))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean squared error between two TDF grids.
pub fn tdf_mse(a: &VoxelGrid, b: &VoxelGrid) -> Result<f64> {
    require_repr(a, Repr::Tdf)?;
    require_repr(b, Repr::Tdf)?;
    check_same_size(a, b.len())?;
    let sum: f64 = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Reduces per-block values to one score (mean for L1, RMS for L2).
pub fn aggregate_blocks(values: &[f64], norm: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "no block values to aggregate".into(),
        ));
    }
    let n = values.len() as f64;
    Ok(match norm {
        Aggregation::L1 => values.iter().sum::<f64>() / n,
        Aggregation::L2 => (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(rng: &mut ChaCha8Rng, size: usize, p: f64) -> VoxelGrid {
        let v = (0..size * size * size)
            .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        VoxelGrid::from_values(size, Repr::Binary, v).unwrap()
    }

    fn random_tdf(rng: &mut ChaCha8Rng, size: usize) -> VoxelGrid {
        let v = (0..size * size * size)
            .map(|_| rng.random::<f64>())
            .collect();
        VoxelGrid::from_values(size, Repr::Tdf, v).unwrap()
    }

    #[test]
    fn wbce_identical_grids_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_binary(&mut rng, 6, 0.3);
        let n = a.len() as f64;
        let n1 = a.occupied_count() as f64;
        for alpha in [0.25, 0.5, 0.75] {
            let expected = -(alpha * n1 + (1.0 - alpha) * (n - n1)) * 0.999f64.ln() / n;
            let got = wbce(&a, &a, alpha, &Clip::default()).unwrap();
            assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
        }
        // -log(0.999) ≈ 1.0005e-3
        assert!((-(0.999f64).ln() - 1.0005e-3).abs() < 1e-7);
    }

    #[test]
    fn wbce_total_disagreement() {
        let a = VoxelGrid::filled(3, Repr::Binary, 1.0);
        let b = VoxelGrid::filled(3, Repr::Binary, 0.0);
        let v = wbce(&a, &b, 0.75, &Clip::default()).unwrap();
        assert!((v - (-0.75 * 0.001f64.ln())).abs() < 1e-12);
        assert!((v - 5.181).abs() < 1e-3);
    }

    #[test]
    fn bce_is_half_weighted() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_binary(&mut rng, 5, 0.4);
        let b = random_binary(&mut rng, 5, 0.4);
        assert_eq!(
            bce(&a, &b, &Clip::default()).unwrap(),
            wbce(&a, &b, 0.5, &Clip::default()).unwrap()
        );
    }

    #[test]
    fn shape_and_repr_errors() {
        let a = VoxelGrid::filled(3, Repr::Binary, 0.0);
        let b = VoxelGrid::filled(4, Repr::Binary, 0.0);
        assert!(matches!(
            wbce(&a, &b, 0.5, &Clip::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            focal_loss(&a, &[0.0; 5], &VoxelMetricConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            nabce(&a, &b, &VoxelMetricConfig::default()),
            Err(Error::ShapeMismatch(_))
        ));
        let t = VoxelGrid::filled(3, Repr::Tdf, 0.0);
        assert!(matches!(tdf_mse(&a, &t), Err(Error::InvalidArgument(_))));
        let t4 = VoxelGrid::filled(4, Repr::Tdf, 0.0);
        assert!(matches!(tdf_mse(&t, &t4), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn focal_binary_is_gamma_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_binary(&mut rng, 6, 0.3);
        let b = random_binary(&mut rng, 6, 0.3);
        let mut cfg = VoxelMetricConfig::default();
        let base = focal_loss(&a, b.values(), &cfg).unwrap();
        for gamma in [0.0, 0.5, 1.0, 4.0] {
            cfg.gamma = gamma;
            assert_eq!(focal_loss(&a, b.values(), &cfg).unwrap(), base);
        }
        let n = a.len() as f64;
        assert!((base - n * wbce(&a, &b, cfg.alpha, &cfg.clip).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn focal_identical_grids_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_binary(&mut rng, 5, 0.5);
        let cfg = VoxelMetricConfig {
            alpha: 0.75,
            gamma: 2.0,
            ..Default::default()
        };
        let n1 = a.occupied_count() as f64;
        let n0 = a.len() as f64 - n1;
        let expected = -(0.75 * n1 + 0.25 * n0) * 0.999f64.ln();
        assert!((focal_loss(&a, a.values(), &cfg).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn focal_probabilistic_half() {
        let a = VoxelGrid::filled(4, Repr::Binary, 1.0);
        let cfg = VoxelMetricConfig {
            alpha: 0.5,
            gamma: 2.0,
            ..Default::default()
        };
        let expected = 64.0 * 0.5 * 0.25 * -(0.5f64.ln());
        let got = focal_loss(&a, &[0.5; 64], &cfg).unwrap();
        assert!((got - expected).abs() < 1e-12);
        assert!(focal_loss(&a, &[1.5; 64], &cfg).is_err());
    }

    #[test]
    fn focal_gradient_matches_finite_differences() {
        let clip = Clip::default();
        let h = 1e-6;
        for &a in &[0.0, 1.0] {
            for &b in &[0.01, 0.2, 0.5, 0.77, 0.95] {
                for &gamma in &[0.0, 0.5, 2.0, 3.0] {
                    let (_, g) = focal_term(a, b, 0.75, gamma, &clip);
                    let fd = (focal_term(a, b + h, 0.75, gamma, &clip).0
                        - focal_term(a, b - h, 0.75, gamma, &clip).0)
                        / (2.0 * h);
                    assert!(
                        (g - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                        "a={a} b={b} g={gamma}: {g} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn focal_gradient_zero_outside_clip() {
        let clip = Clip::default();
        // Pure log term (gamma = 0) has a flat region outside the clip.
        assert_eq!(focal_term(1.0, 0.0005, 0.75, 0.0, &clip).1, 0.0);
        assert_eq!(focal_term(0.0, 0.9995, 0.75, 0.0, &clip).1, 0.0);
    }

    /// Independent, loop-based naBCE used as an oracle.
    fn nabce_naive(a: &VoxelGrid, b: &VoxelGrid, m: usize, clip: &Clip) -> f64 {
        let s = a.size() as i64;
        let h = (m / 2) as i64;
        let mut r = vec![0.0; a.len()];
        for z in 0..s {
            for y in 0..s {
                for x in 0..s {
                    let u = a.get(x as usize, y as usize, z as usize);
                    let mut acc = 0.0;
                    for dz in -h..=h {
                        for dy in -h..=h {
                            for dx in -h..=h {
                                let (vx, vy, vz) = (x + dx, y + dy, z + dz);
                                if (dx, dy, dz) == (0, 0, 0)
                                    || vx < 0
                                    || vy < 0
                                    || vz < 0
                                    || vx >= s
                                    || vy >= s
                                    || vz >= s
                                {
                                    continue;
                                }
                                if a.get(vx as usize, vy as usize, vz as usize) == u {
                                    acc += 1.0 / (((dx * dx + dy * dy + dz * dz) as f64).sqrt());
                                }
                            }
                        }
                    }
                    r[a.index(x as usize, y as usize, z as usize)] = acc;
                }
            }
        }
        let max_r = r.iter().cloned().fold(f64::MIN, f64::max);
        let mut total = 0.0;
        for i in 0..a.len() {
            let w = f64::max(1.0 - r[i] / max_r, 0.001);
            let (xa, xb) = (a.values()[i], b.values()[i]);
            total -= w * xa * xb.clamp(clip.lo, clip.hi).ln()
                + (1.0 - w) * (1.0 - xa) * (1.0 - xb).clamp(clip.lo, clip.hi).ln();
        }
        total / a.len() as f64
    }

    #[test]
    fn nabce_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = VoxelMetricConfig::default();
        for _ in 0..4 {
            let a = random_binary(&mut rng, 8, 0.3);
            let b = random_binary(&mut rng, 8, 0.3);
            let got = nabce(&a, &b, &cfg).unwrap();
            let want = nabce_naive(&a, &b, 5, &cfg.clip);
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn nabce_uniform_grid_floors_interior() {
        let a = VoxelGrid::filled(7, Repr::Binary, 1.0);
        let w = nabce_weights(&a, 5);
        // Voxels whose full 5³ window fits inside the 7³ grid reach max(r).
        for z in 2..5 {
            for y in 2..5 {
                for x in 2..5 {
                    assert_eq!(w[a.index(x, y, z)], 0.001);
                }
            }
        }
        assert!(w[a.index(0, 0, 0)] > 0.001);
    }

    #[test]
    fn tdf_mse_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_tdf(&mut rng, 6);
        let b = random_tdf(&mut rng, 6);
        assert_eq!(tdf_mse(&a, &a).unwrap(), 0.0);
        let zeros = VoxelGrid::filled(4, Repr::Tdf, 0.0);
        let ones = VoxelGrid::filled(4, Repr::Tdf, 1.0);
        assert_eq!(tdf_mse(&zeros, &ones).unwrap(), 1.0);
        let mut naive = 0.0;
        for i in 0..a.len() {
            let d = a.values()[i] - b.values()[i];
            naive += d * d;
        }
        naive /= a.len() as f64;
        assert!((tdf_mse(&a, &b).unwrap() - naive).abs() < 1e-12);
        assert_eq!(tdf_mse(&a, &b).unwrap(), tdf_mse(&b, &a).unwrap());
    }

    #[test]
    fn aggregation_arithmetic() {
        assert_eq!(
            aggregate_blocks(&[3.0, 3.0, 3.0], Aggregation::L1).unwrap(),
            3.0
        );
        assert_eq!(
            aggregate_blocks(&[3.0, 3.0, 3.0], Aggregation::L2).unwrap(),
            3.0
        );
        assert_eq!(aggregate_blocks(&[0.0, 2.0], Aggregation::L1).unwrap(), 1.0);
        assert!(
            (aggregate_blocks(&[0.0, 2.0], Aggregation::L2).unwrap() - 2f64.sqrt()).abs() < 1e-15
        );
        assert!(aggregate_blocks(&[], Aggregation::L1).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(VoxelMetricConfig::default().validate().is_ok());
        assert!(VoxelMetricConfig {
            alpha: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(VoxelMetricConfig {
            nabce_window: 4,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(Clip::new(0.9, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn l2_dominates_l1(values in prop::collection::vec(0.0f64..100.0, 1..50)) {
            let l1 = aggregate_blocks(&values, Aggregation::L1).unwrap();
            let l2 = aggregate_blocks(&values, Aggregation::L2).unwrap();
            prop_assert!(l2 >= l1 * (1.0 - 1e-12));
        }

        #[test]
        fn nabce_weights_bounded(bits in prop::collection::vec(any::<bool>(), 125)) {
            let g = VoxelGrid::from_values(5, Repr::Binary, bits.iter().map(|&b| b as u8 as f64).collect()).unwrap();
            for w in nabce_weights(&g, 5) {
                prop_assert!((0.001..=1.0).contains(&w));
            }
        }
    }
}
