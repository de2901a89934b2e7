use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use super::stats::{median, pearson, std_dev};
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 1000;
const REL_TOLERANCE: f64 = 1e-10;

/// Monotonic logistic `q(s) = a + (b - a) / (1 + exp(-c (s - d)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    /// Sum of squared residuals on the fitted data.
    pub sse: f64,
    pub iterations: usize,
    /// The relative SSE change fell below tolerance before the iteration cap.
    pub converged: bool,
    /// Constant MOS or constant scores; the fit is flat.
    pub degenerate: bool,
}

impl LogisticFit {
    pub fn predict(&self, s: f64) -> f64 {
        self.a + (self.b - self.a) * sigmoid(self.c * (s - self.d))
    }

    fn params(&self) -> Vector4<f64> {
        Vector4::new(self.a, self.b, self.c, self.d)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn sse_of(p: &Vector4<f64>, s: &[f64], y: &[f64]) -> f64 {
    s.iter()
        .zip(y)
        .map(|(&si, &yi)| {
            let r = p[0] + (p[1] - p[0]) * sigmoid(p[2] * (si - p[3])) - yi;
            r * r
        })
        .sum()
}

/// `J^T J` and `J^T r` of the residuals `q(s_i) - y_i`.
fn normal_equations(p: &Vector4<f64>, s: &[f64], y: &[f64]) -> (Matrix4<f64>, Vector4<f64>) {
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    let mut jtj = Matrix4::zeros();
    let mut jtr = Vector4::zeros();
    for (&si, &yi) in s.iter().zip(y) {
        let g = sigmoid(c * (si - d));
        let dg = g * (1.0 - g);
        let r = a + (b - a) * g - yi;
        let j = Vector4::new(1.0 - g, g, (b - a) * dg * (si - d), -(b - a) * dg * c);
        jtj += j * j.transpose();
        jtr += j * r;
    }
    (jtj, jtr)
}

/// Least-squares fit by Levenberg-Marquardt from a fixed starting point:
/// `a = min(mos)`, `b = max(mos)`, `d = median(scores)` and
/// `c = sign(corr) / std(scores)`.
pub fn fit_logistic(scores: &[f64], mos: &[f64]) -> Result<LogisticFit> {
    if scores.len() != mos.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} MOS",
            scores.len(),
            mos.len()
        )));
    }
    if scores.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "logistic fit needs 5 samples, got {}",
            scores.len()
        )));
    }
    if scores.iter().chain(mos).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(
            "non-finite sample in logistic fit".into(),
        ));
    }
    let lo = mos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sd = std_dev(scores);
    let d = median(scores);

    if lo == hi || sd == 0.0 {
        let level = if lo == hi {
            lo
        } else {
            super::stats::mean(mos)
        };
        let fit = LogisticFit {
            a: level,
            b: level,
            c: 0.0,
            d,
            sse: 0.0,
            iterations: 0,
            converged: false,
            degenerate: true,
        };
        return Ok(LogisticFit {
            sse: sse_of(&fit.params(), scores, mos),
            ..fit
        });
    }

    let sign = match pearson(scores, mos) {
        Ok(r) if r < 0.0 => -1.0,
        _ => 1.0,
    };
    let mut p = Vector4::new(lo, hi, sign / sd, d);
    let mut sse = sse_of(&p, scores, mos);
    let mut lambda = 1e-3;
    let mut converged = sse == 0.0;
    let mut iterations = 0;

    while !converged && iterations < MAX_ITERATIONS {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&p, scores, mos);
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            lambda *= 10.0;
            continue;
        };
        let candidate = p + step;
        let new_sse = sse_of(&candidate, scores, mos);
        if new_sse.is_finite() && new_sse <= sse {
            let rel = (sse - new_sse) / sse.max(f64::MIN_POSITIVE);
            p = candidate;
            sse = new_sse;
            lambda = (lambda / 10.0).max(1e-15);
            converged = rel < REL_TOLERANCE || sse == 0.0;
        } else {
            lambda *= 10.0;
            if lambda > 1e15 {
                // No descent direction left at this precision.
                converged = true;
            }
        }
    }

    Ok(LogisticFit {
        a: p[0],
        b: p[1],
        c: p[2],
        d: p[3],
        sse,
        iterations,
        converged,
        degenerate: (p[1] - p[0]).abs() <= 1e-12 * (lo.abs() + hi.abs()).max(1e-300),
    })
}
