use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 5] = ["stimulus_id", "content_id", "codec", "rate_level", "mos"];
const CI_COLUMN: &str = "mos_ci95";

/// One rated stimulus with the scores of every metric under study.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusRecord {
    pub stimulus_id: String,
    pub content_id: String,
    pub codec: String,
    pub rate_level: String,
    pub mos: f64,
    pub mos_ci95: Option<f64>,
    /// Metric name to score; blank cells are left out.
    pub metric_scores: BTreeMap<String, f64>,
}

impl StimulusRecord {
    /// Undistorted stimuli carry the codec `ref` or `reference`.
    pub fn is_reference(&self) -> bool {
        let c = self.codec.to_ascii_lowercase();
        c == "ref" || c == "reference"
    }
}

/// Records of a subjective test plus the metric columns in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StimulusSet {
    pub metrics: Vec<String>,
    pub records: Vec<StimulusRecord>,
}

fn parse_number(s: &str, line: usize, column: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::parse(line, format!("column {column}: '{s}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::parse(
            line,
            format!("column {column}: non-finite value"),
        ));
    }
    Ok(v)
}

impl StimulusSet {
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file)
    }

    /// Parses `stimulus_id,content_id,codec,rate_level,mos[,mos_ci95]`
    /// followed by one column per metric.
    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(1, e.to_string()))?
            .clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let mut fixed = [0usize; 5];
        for (slot, name) in fixed.iter_mut().zip(FIXED_COLUMNS) {
            *slot = find(name).ok_or_else(|| Error::MissingData(format!("column '{name}'")))?;
        }
        let ci = find(CI_COLUMN);
        let metric_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !FIXED_COLUMNS.contains(h) && *h != CI_COLUMN)
            .map(|(i, h)| (i, h.to_string()))
            .collect();

        let mut records = Vec::new();
        for row in reader.records() {
            let row = row.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(line, e.to_string())
            })?;
            let line = row.position().map_or(0, |p| p.line() as usize);
            let field = |i: usize| row.get(i).unwrap_or("");
            let content_id = field(fixed[1]).to_string();
            if content_id.is_empty() {
                return Err(Error::parse(line, "empty content_id"));
            }
            let mos = parse_number(field(fixed[4]), line, "mos")?;
            let mos_ci95 = match ci.map(field) {
                Some(s) if !s.is_empty() => {
                    let v = parse_number(s, line, CI_COLUMN)?;
                    if v < 0.0 {
                        return Err(Error::parse(line, "negative confidence interval"));
                    }
                    Some(v)
                }
                _ => None,
            };
            let mut metric_scores = BTreeMap::new();
            for (i, name) in &metric_cols {
                let s = field(*i);
                if !s.is_empty() {
                    metric_scores.insert(name.clone(), parse_number(s, line, name)?);
                }
            }
            records.push(StimulusRecord {
                stimulus_id: field(fixed[0]).to_string(),
                content_id,
                codec: field(fixed[2]).to_string(),
                rate_level: field(fixed[3]).to_string(),
                mos,
                mos_ci95,
                metric_scores,
            });
        }
        if records.is_empty() {
            return Err(Error::EmptyInput("score table has no rows".into()));
        }
        Ok(Self {
            metrics: metric_cols.into_iter().map(|(_, n)| n).collect(),
            records,
        })
    }

    pub fn without_references(&self) -> Self {
        Self {
            metrics: self.metrics.clone(),
            records: self
                .records
                .iter()
                .filter(|r| !r.is_reference())
                .cloned()
                .collect(),
        }
    }

    /// Splits by codec in order of first appearance. References are
    /// dropped since they belong to no codec.
    pub fn group_by_codec(&self) -> Vec<(String, StimulusSet)> {
        let mut groups: Vec<(String, StimulusSet)> = Vec::new();
        for r in self.records.iter().filter(|r| !r.is_reference()) {
            match groups.iter_mut().find(|(c, _)| *c == r.codec) {
                Some((_, g)) => g.records.push(r.clone()),
                None => groups.push((
                    r.codec.clone(),
                    StimulusSet {
                        metrics: self.metrics.clone(),
                        records: vec![r.clone()],
                    },
                )),
            }
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "stimulus_id,content_id,codec,rate_level,mos,mos_ci95,m1,m2\n\
        s1,c1,ref,ref,4.8,0.2,0.0,1\n\
        s2,c1,vpcc,r1,3.1,0.3,0.5,\n\
        s3,c2,gpcc,r1,2.0,0.25,0.9,3\n";

    #[test]
    fn parses_rows() {
        let set = StimulusSet::from_reader(CSV.as_bytes()).unwrap();
        assert_eq!(set.metrics, vec!["m1", "m2"]);
        assert_eq!(set.records.len(), 3);
        assert_eq!(set.records[1].metric_scores.get("m2"), None);
        assert_eq!(set.records[2].mos_ci95, Some(0.25));
        assert!(set.records[0].is_reference());
        assert_eq!(set.without_references().records.len(), 2);
        let groups = set.group_by_codec();
        assert_eq!(
            groups.iter().map(|(c, _)| c.as_str()).collect::<Vec<_>>(),
            vec!["vpcc", "gpcc"]
        );
    }

    #[test]
    fn missing_column_is_named() {
        let err =
            StimulusSet::from_reader("stimulus_id,content_id,codec,mos\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::MissingData(ref m) if m.contains("rate_level")));
    }

    #[test]
    fn bad_number_reports_line() {
        let csv = "stimulus_id,content_id,codec,rate_level,mos\ns1,c1,x,r,abc\n";
        assert!(matches!(
            StimulusSet::from_reader(csv.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
    }
}
