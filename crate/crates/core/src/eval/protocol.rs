use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use super::logistic::{fit_logistic, LogisticFit};
use super::records::StimulusRecord;
use super::stats::{outlier_ratio, pearson, rmse, spearman};
use crate::error::{Error, Result};

/// Agreement of fitted predictions with MOS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub pcc: f64,
    pub srocc: f64,
    pub rmse: f64,
    pub or_: f64,
}

impl EvalStats {
    /// Statistics of `pred` against `mos`; intervals feed the outlier ratio.
    pub fn compute(pred: &[f64], mos: &[f64], ci95: Option<&[f64]>) -> Result<Self> {
        Ok(Self {
            pcc: pearson(pred, mos)?,
            srocc: spearman(pred, mos)?,
            rmse: rmse(pred, mos)?,
            or_: outlier_ratio(pred, mos, ci95)?,
        })
    }
}

/// One held-out stimulus.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub stimulus_id: String,
    pub content_id: String,
    pub score: f64,
    pub prediction: f64,
    pub mos: f64,
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LoocvResult {
    pub metric: String,
    pub stats: EvalStats,
    /// Test predictions of all splits, concatenated in split order.
    pub predictions: Vec<Prediction>,
    /// Held-out content and the logistic fitted without it, per split.
    pub fits: Vec<(String, LogisticFit)>,
}

impl LoocvResult {
    pub fn predicted(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.prediction).collect()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.predictions.iter().map(|p| p.mos).collect()
    }
}

/// Distinct content ids in order of first appearance.
pub fn contents(records: &[StimulusRecord]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in records {
        if !out.contains(&r.content_id) {
            out.push(r.content_id.clone());
        }
    }
    out
}

/// Leave-one-content-out evaluation of one metric: each content in turn is
/// predicted by a logistic fitted on every other content.
pub fn loocv_evaluate(records: &[StimulusRecord], metric: &str) -> Result<LoocvResult> {
    let missing: Vec<&str> = records
        .iter()
        .filter(|r| !r.metric_scores.contains_key(metric))
        .map(|r| r.stimulus_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingData(format!(
            "metric '{metric}' has no score for stimuli {}",
            missing.join(", ")
        )));
    }
    let ids = contents(records);
    if ids.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-validation needs 2 contents, found {}",
            ids.len()
        )));
    }
    let score = |r: &StimulusRecord| r.metric_scores[metric];

    let mut predictions = Vec::with_capacity(records.len());
    let mut fits = Vec::with_capacity(ids.len());
    for held_out in &ids {
        let (s, m): (Vec<f64>, Vec<f64>) = records
            .iter()
            .filter(|r| &r.content_id != held_out)
            .map(|r| (score(r), r.mos))
            .unzip();
        let fit = fit_logistic(&s, &m)?;
        for r in records.iter().filter(|r| &r.content_id == held_out) {
            predictions.push(Prediction {
                stimulus_id: r.stimulus_id.clone(),
                content_id: r.content_id.clone(),
                score: score(r),
                prediction: fit.predict(score(r)),
                mos: r.mos,
                ci95: r.mos_ci95,
            });
        }
        fits.push((held_out.clone(), fit));
    }

    let pred: Vec<f64> = predictions.iter().map(|p| p.prediction).collect();
    let mos: Vec<f64> = predictions.iter().map(|p| p.mos).collect();
    let ci: Option<Vec<f64>> = predictions.iter().map(|p| p.ci95).collect();
    let stats = EvalStats::compute(&pred, &mos, ci.as_deref())?;
    Ok(LoocvResult {
        metric: metric.to_string(),
        stats,
        predictions,
        fits,
    })
}

/// Confidence interval for `PCC(a, mos) - PCC(b, mos)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Significance {
    pub r1: f64,
    pub r2: f64,
    /// Correlation between the two score vectors.
    pub r12: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub significant: bool,
}

/// Zou's interval for the difference of two dependent correlations that
/// share the MOS vector, built from Fisher-z limits of each correlation.
pub fn pcc_difference_significance(
    a: &[f64],
    b: &[f64],
    mos: &[f64],
    confidence: f64,
) -> Result<Significance> {
    if a.len() != b.len() || a.len() != mos.len() {
        return Err(Error::ShapeMismatch(
            "score vectors differ in length".into(),
        ));
    }
    let n = a.len();
    if n < 10 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10 stimuli, got {n}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let r1 = pearson(a, mos)?;
    let r2 = pearson(b, mos)?;
    let r12 = pearson(a, b)?;

    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
    let se = 1.0 / ((n - 3) as f64).sqrt();
    let limits = |r: f64| {
        let zr = r.atanh();
        ((zr - z * se).tanh(), (zr + z * se).tanh())
    };
    let (l1, u1) = limits(r1);
    let (l2, u2) = limits(r2);

    let den = (1.0 - r1 * r1) * (1.0 - r2 * r2);
    let c = if den == 0.0 {
        // A perfect correlation has a zero-width interval; the covariance
        // term it multiplies vanishes.
        0.0
    } else {
        ((r12 - r1 * r2 / 2.0) * (1.0 - r1 * r1 - r2 * r2 - r12 * r12) + r12.powi(3)) / den
    };
    let diff = r1 - r2;
    let lower = ((r1 - l1).powi(2) + (u2 - r2).powi(2) - 2.0 * c * (r1 - l1) * (u2 - r2)).max(0.0);
    let upper = ((u1 - r1).powi(2) + (r2 - l2).powi(2) - 2.0 * c * (u1 - r1) * (r2 - l2)).max(0.0);
    let ci_low = diff - lower.sqrt();
    let ci_high = diff + upper.sqrt();
    Ok(Significance {
        r1,
        r2,
        r12,
        ci_low,
        ci_high,
        significant: ci_low > 0.0 || ci_high < 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn record(i: usize, content: &str, mos: f64, score: f64) -> StimulusRecord {
        StimulusRecord {
            stimulus_id: format!("s{i}"),
            content_id: content.to_string(),
            codec: "x".into(),
            rate_level: "r".into(),
            mos,
            mos_ci95: Some(0.1),
            metric_scores: BTreeMap::from([("m".to_string(), score)]),
        }
    }

    #[test]
    fn one_split_per_content() {
        let records: Vec<_> = (0..18)
            .map(|i| {
                record(
                    i,
                    ["a", "b", "c"][i % 3],
                    1.0 + (i as f64 * 0.37) % 4.0,
                    i as f64,
                )
            })
            .collect();
        let res = loocv_evaluate(&records, "m").unwrap();
        assert_eq!(
            res.fits.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>(),
            vec!["a", "b", "c"]
        );
        let order: Vec<_> = res
            .predictions
            .iter()
            .map(|p| p.content_id.as_str())
            .collect();
        assert!(order[..6].iter().all(|&c| c == "a") && order[12..].iter().all(|&c| c == "c"));
    }

    #[test]
    fn missing_scores_are_listed() {
        let mut records: Vec<_> = (0..12)
            .map(|i| record(i, ["a", "b"][i % 2], i as f64, i as f64))
            .collect();
        records[3].metric_scores.clear();
        match loocv_evaluate(&records, "m") {
            Err(Error::MissingData(m)) => assert!(m.contains("s3")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn identical_scores_are_not_significant() {
        let mos: Vec<f64> = (0..30)
            .map(|i| (i as f64 * 1.7).sin() + i as f64 * 0.1)
            .collect();
        let s: Vec<f64> = mos
            .iter()
            .enumerate()
            .map(|(i, m)| m + (i as f64 * 3.1).cos())
            .collect();
        let sig = pcc_difference_significance(&s, &s, &mos, 0.95).unwrap();
        assert!(!sig.significant);
        assert!(sig.ci_low < 0.0 && sig.ci_high > 0.0);
        assert!((sig.ci_low + sig.ci_high).abs() < 1e-12);
    }
}
