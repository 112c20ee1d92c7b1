//! `report.json` and per-check CSV files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use pwalk_core::HypothesisFlags;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const TIMING_FILE: &str = "timing.json";

/// How `statistic` is compared with `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Below,
    AtMost,
    Above,
}

impl Rule {
    pub fn holds(self, statistic: f64, threshold: f64) -> bool {
        match self {
            Rule::Below => statistic < threshold,
            Rule::AtMost => statistic <= threshold,
            Rule::Above => statistic > threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Rule::Below => "<",
            Rule::AtMost => "<=",
            Rule::Above => ">",
        }
    }
}

/// One statistical check. `holds` is the raw outcome of the comparison,
/// `expected` the outcome the applicable limit theorem predicts, and the
/// check passes when the two agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub rule: Rule,
    pub holds: bool,
    pub expected: bool,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
}

impl Check {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, rule: Rule, expected: bool) -> Self {
        let holds = rule.holds(statistic, threshold);
        Check {
            name: name.into(),
            statistic,
            threshold,
            rule,
            holds,
            expected,
            pass: holds == expected,
            details: BTreeMap::new(),
        }
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub replications: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis_flags: Option<HypothesisFlags>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl Report {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Plot data for one check: documented columns of floating-point values.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub check: String,
    pub comments: Vec<String>,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
}

impl Artifact {
    pub fn file_name(&self) -> String {
        format!("{}.csv", self.check)
    }

    /// Header comments, a column line, then one row per line with 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "# {c}");
        }
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

pub fn ecdf_artifact(check: &str, samples: &[f64], cdf: impl Fn(f64) -> f64, reference: &str) -> Artifact {
    let rows = pwalk_core::verify::ecdf(samples).into_iter().map(|(x, f)| vec![x, f, cdf(x)]).collect();
    Artifact {
        check: check.to_string(),
        comments: vec![
            format!("check: {check}"),
            "x: sample value, sorted ascending".into(),
            "ecdf: empirical CDF i/n at x".into(),
            format!("cdf: reference CDF at x ({reference})"),
        ],
        columns: vec!["x", "ecdf", "cdf"],
        rows,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub workers: usize,
}

pub fn write_outputs(dir: &Path, report: &Report, artifacts: &[Artifact], timing: Option<&Timing>) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    json.push('\n');
    fs::write(dir.join(REPORT_FILE), json)?;
    for a in artifacts {
        fs::write(dir.join(a.file_name()), a.to_csv())?;
    }
    if let Some(t) = timing {
        let mut json = serde_json::to_string_pretty(t).map_err(io::Error::other)?;
        json.push('\n');
        fs::write(dir.join(TIMING_FILE), json)?;
    }
    Ok(())
}

pub fn read_report(dir: &Path) -> io::Result<Report> {
    let text = fs::read_to_string(dir.join(REPORT_FILE))?;
    serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

/// One line per check: `PASS|FAIL name statistic rule threshold`.
pub fn summary(report: &Report) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} seed={} reps={} hash={}",
        report.experiment, report.master_seed, report.replications, report.config_hash
    );
    for c in &report.checks {
        let verdict = if c.pass { "PASS" } else { "FAIL" };
        let note = if c.expected { "" } else { " (expected not to hold)" };
        let _ = writeln!(
            out,
            "{verdict} {} {:.6} {} {:.6}{note}",
            c.name,
            c.statistic,
            c.rule.symbol(),
            c.threshold
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecdf_file_has_one_row_per_sample() {
        let a = ecdf_artifact("ks", &[0.3, 0.1, 0.2], |x| x, "uniform");
        let csv = a.to_csv();
        let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(data.len(), 3);
        assert!(data[0].starts_with("1.0000000000000001e-1,"));
    }

    #[test]
    fn csv_values_round_trip() {
        let v = [std::f64::consts::PI, 1.0 / 3.0, 1e-300, 12345.678];
        let a = Artifact { check: "x".into(), comments: vec![], columns: vec!["v"], rows: v.iter().map(|x| vec![*x]).collect() };
        let back: Vec<f64> = a.to_csv().lines().skip(1).map(|l| l.parse().unwrap()).collect();
        assert_eq!(back, v);
    }

    #[test]
    fn expected_failure_passes() {
        let c = Check::new("lln", 0.5, 0.02, Rule::Below, false);
        assert!(!c.holds && c.pass);
    }
}
