//! Checked-in reference values and the observed-versus-reference table.

use std::fmt::Write as _;

use crate::error::SimError;

const REFERENCE_CSV: &str = include_str!("../../data/reference_values.csv");

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub exhibit: String,
    pub series: String,
    pub x: String,
    pub metric: String,
    pub reference: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

fn opt(field: &str, line: usize) -> Result<Option<f64>, SimError> {
    let f = field.trim();
    if f.is_empty() {
        return Ok(None);
    }
    f.parse()
        .map(Some)
        .map_err(|_| SimError::Internal(format!("reference table line {line}: bad number `{f}`")))
}

pub fn parse_references(text: &str) -> Result<Vec<Reference>, SimError> {
    let mut out = Vec::new();
    let mut header_seen = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !header_seen {
            header_seen = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(SimError::Internal(format!("reference table line {}: expected 7 fields", i + 1)));
        }
        out.push(Reference {
            exhibit: f[0].to_string(),
            series: f[1].to_string(),
            x: f[2].to_string(),
            metric: f[3].to_string(),
            reference: opt(f[4], i + 1)?,
            lower: opt(f[5], i + 1)?,
            upper: opt(f[6], i + 1)?,
        });
    }
    Ok(out)
}

pub fn references() -> Vec<Reference> {
    parse_references(REFERENCE_CSV).expect("bundled reference table is well formed")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
    /// No bounds to check against.
    Info,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub exhibit: String,
    pub series: String,
    pub x: String,
    pub metric: String,
    pub observed: f64,
    pub reference: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Comparison {
    pub fn verdict(&self) -> Verdict {
        if self.lower.is_none() && self.upper.is_none() {
            return Verdict::Info;
        }
        let ok = self.lower.is_none_or(|l| self.observed >= l) && self.upper.is_none_or(|u| self.observed <= u);
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// An observed value, before it is matched against the reference table.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub series: String,
    pub x: String,
    pub metric: String,
    pub value: f64,
}

impl Observation {
    pub fn new(series: impl Into<String>, x: impl ToString, metric: impl Into<String>, value: f64) -> Self {
        Observation {
            series: series.into(),
            x: x.to_string(),
            metric: metric.into(),
            value,
        }
    }
}

pub fn compare(exhibit: &str, observations: Vec<Observation>, refs: &[Reference]) -> Vec<Comparison> {
    observations
        .into_iter()
        .map(|o| {
            let r = refs
                .iter()
                .find(|r| r.exhibit == exhibit && r.series == o.series && r.x == o.x && r.metric == o.metric);
            Comparison {
                exhibit: exhibit.to_string(),
                series: o.series,
                x: o.x,
                metric: o.metric,
                observed: o.value,
                reference: r.and_then(|r| r.reference),
                lower: r.and_then(|r| r.lower),
                upper: r.and_then(|r| r.upper),
            }
        })
        .collect()
}

pub const COMPARISON_HEADER: &str = "exhibit,series,x,metric,observed,reference,lower,upper,verdict";

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn comparison_csv(rows: &[Comparison]) -> String {
    let mut s = String::from(COMPARISON_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{},{},{},{}",
            r.exhibit,
            r.series,
            r.x,
            r.metric,
            r.observed,
            num(r.reference),
            num(r.lower),
            num(r.upper),
            r.verdict().as_str()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_parses() {
        let refs = references();
        assert!(refs.iter().any(|r| r.exhibit == "table3" && r.metric == "pdr"));
        let tdma = refs
            .iter()
            .find(|r| r.exhibit == "table3" && r.series == "tdma" && r.metric == "pdr")
            .unwrap();
        assert_eq!(tdma.reference, Some(0.9771));
    }

    #[test]
    fn verdict_follows_bounds() {
        let refs = parse_references("h\nx,s,1,m,5,3,8\nx,s,2,m,1,,\n").unwrap();
        let rows = compare(
            "x",
            vec![
                Observation::new("s", 1, "m", 7.9),
                Observation::new("s", 1, "m", 8.1),
                Observation::new("s", 2, "m", 0.0),
                Observation::new("s", 3, "m", 0.0),
            ],
            &refs,
        );
        let v: Vec<_> = rows.iter().map(Comparison::verdict).collect();
        assert_eq!(v, [Verdict::Pass, Verdict::Fail, Verdict::Info, Verdict::Info]);
        assert_eq!(rows[3].reference, None);
    }

    #[test]
    fn malformed_rows_are_rejected() {
        assert!(parse_references("h\na,b,c\n").is_err());
        assert!(parse_references("h\na,b,c,d,x,,\n").is_err());
    }

    #[test]
    fn csv_has_header_and_verdict() {
        let rows = compare("e", vec![Observation::new("s", "x", "m", 1.0)], &[]);
        let csv = comparison_csv(&rows);
        assert!(csv.starts_with(COMPARISON_HEADER));
        assert!(csv.trim_end().ends_with(",info"));
    }
}
