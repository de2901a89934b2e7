use std::io::Write;
use std::path::Path;

use super::protocol::{loocv_evaluate, pcc_difference_significance, LoocvResult, Significance};
use super::records::StimulusSet;
use crate::error::{Error, Result};

/// Formats `v` with 6 significant digits, then prints the shortest
/// decimal that reads back as that rounded value.
pub fn format_sig6(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}")
        .parse()
        .expect("scientific notation parses");
    if rounded == 0.0 {
        return "0".into();
    }
    rounded.to_string()
}

/// LOOCV results of several metrics on one stimulus set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    /// Sorted by descending PCC; ties keep the requested order.
    pub results: Vec<LoocvResult>,
    /// Pairwise PCC difference tests, in the order of `results`.
    pub significance: Vec<(String, String, Significance)>,
}

pub fn evaluate(set: &StimulusSet, metrics: &[String], confidence: f64) -> Result<EvalReport> {
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metric to evaluate".into()));
    }
    for m in metrics {
        if !set.metrics.contains(m) {
            return Err(Error::MissingData(format!("column '{m}'")));
        }
    }
    let mut results = metrics
        .iter()
        .map(|m| loocv_evaluate(&set.records, m))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by(|a, b| b.stats.pcc.total_cmp(&a.stats.pcc));

    let mut significance = Vec::new();
    if set.records.len() >= 10 {
        for i in 0..results.len() {
            for j in i + 1..results.len() {
                let (a, b) = (&results[i], &results[j]);
                let sig = pcc_difference_significance(
                    &a.predicted(),
                    &b.predicted(),
                    &a.mos(),
                    confidence,
                )?;
                significance.push((a.metric.clone(), b.metric.clone(), sig));
            }
        }
    }
    Ok(EvalReport {
        results,
        significance,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::InvalidArgument(format!("writing {}: {other:?}", path.display())),
    }
}

impl EvalReport {
    pub fn write_summary<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["method", "pcc", "srocc", "rmse", "or"])?;
        for r in &self.results {
            let s = r.stats;
            out.write_record([
                r.metric.clone(),
                format_sig6(s.pcc),
                format_sig6(s.srocc),
                format_sig6(s.rmse),
                format_sig6(s.or_),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_predictions<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method",
            "stimulus_id",
            "content_id",
            "score",
            "prediction",
            "mos",
        ])?;
        for r in &self.results {
            for p in &r.predictions {
                out.write_record([
                    r.metric.clone(),
                    p.stimulus_id.clone(),
                    p.content_id.clone(),
                    format_sig6(p.score),
                    format_sig6(p.prediction),
                    format_sig6(p.mos),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_significance<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "method_a",
            "method_b",
            "pcc_a",
            "pcc_b",
            "ci_low",
            "ci_high",
            "significant",
        ])?;
        for (a, b, s) in &self.significance {
            out.write_record([
                a.clone(),
                b.clone(),
                format_sig6(s.r1),
                format_sig6(s.r2),
                format_sig6(s.ci_low),
                format_sig6(s.ci_high),
                s.significant.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes `report{suffix}.csv`, `predictions{suffix}.csv` and
    /// `significance{suffix}.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path, suffix: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let open = |name: &str| -> Result<(std::path::PathBuf, std::fs::File)> {
            let path = dir.join(format!("{name}{suffix}.csv"));
            let f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            Ok((path, f))
        };
        let (p, f) = open("report")?;
        self.write_summary(f).map_err(|e| csv_err(&p, e))?;
        let (p, f) = open("predictions")?;
        self.write_predictions(f).map_err(|e| csv_err(&p, e))?;
        let (p, f) = open("significance")?;
        self.write_significance(f).map_err(|e| csv_err(&p, e))?;
        Ok(())
    }
}
