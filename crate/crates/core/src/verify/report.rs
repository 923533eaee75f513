use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::output::write_hash_line;
use crate::stats::fmt_f64;

/// Outcome of one certification check; `pass` holds exactly when
/// `statistic ≤ threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub statistic: f64,
    pub threshold: f64,
    pub pass: bool,
    pub samples: usize,
    pub config_hash: Option<String>,
    /// Supporting numbers (estimates, standard errors, bounds).
    #[serde(default)]
    pub details: BTreeMap<String, f64>,
    /// Set when the check could not be evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, statistic: f64, threshold: f64, samples: usize) -> Self {
        Self {
            name: name.into(),
            statistic,
            threshold,
            pass: statistic <= threshold,
            samples,
            config_hash: None,
            details: BTreeMap::new(),
            error: None,
        }
    }

    /// A failed report carrying the error that stopped the check.
    pub fn failed(name: impl Into<String>, error: impl ToString) -> Self {
        Self {
            name: name.into(),
            statistic: f64::NAN,
            threshold: f64::NAN,
            pass: false,
            samples: 0,
            config_hash: None,
            details: BTreeMap::new(),
            error: Some(error.to_string()),
        }
    }

    pub fn detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.to_string(), value);
        self
    }

    pub fn with_hash(mut self, hash: Option<&str>) -> Self {
        self.config_hash = hash.map(str::to_string);
        self
    }

    /// One-line human summary.
    pub fn line(&self) -> String {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        match &self.error {
            Some(e) => format!("{verdict} {}: error: {e}", self.name),
            None => {
                let rel = if self.pass { "<=" } else { ">" };
                format!("{verdict} {}: statistic {:.6e} {rel} threshold {:.6e}", self.name, self.statistic, self.threshold)
            }
        }
    }
}

type Job<'a> = Box<dyn FnOnce() -> Result<CheckReport> + Send + 'a>;

/// A list of named checks run independently; an error in one check becomes
/// a failed report and never stops the others.
#[derive(Default)]
pub struct CheckSuite<'a> {
    jobs: Vec<(String, Job<'a>)>,
}

impl<'a> CheckSuite<'a> {
    pub fn new() -> Self {
        Self { jobs: Vec::new() }
    }

    pub fn add<F>(&mut self, name: impl Into<String>, job: F) -> &mut Self
    where
        F: FnOnce() -> Result<CheckReport> + Send + 'a,
    {
        self.jobs.push((name.into(), Box::new(job)));
        self
    }

    pub fn len(&self) -> usize {
        self.jobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jobs.is_empty()
    }

    /// Runs every check in insertion order; reports are sorted by name.
    pub fn run(self, hash: Option<&str>) -> SuiteSummary {
        let mut reports: Vec<CheckReport> = self
            .jobs
            .into_iter()
            .map(|(name, job)| {
                let rep = match std::panic::catch_unwind(std::panic::AssertUnwindSafe(job)) {
                    Ok(Ok(mut r)) => {
                        r.name = name;
                        r
                    }
                    Ok(Err(e)) => CheckReport::failed(name, e),
                    Err(_) => CheckReport::failed(name, "check panicked"),
                };
                rep.with_hash(hash)
            })
            .collect();
        reports.sort_by(|a, b| a.name.cmp(&b.name));
        SuiteSummary::from_reports(reports, hash)
    }
}

/// Aggregated suite outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub passed: usize,
    pub failed: usize,
    pub all_pass: bool,
    pub config_hash: Option<String>,
    pub reports: Vec<CheckReport>,
}

impl SuiteSummary {
    pub fn from_reports(reports: Vec<CheckReport>, hash: Option<&str>) -> Self {
        let passed = reports.iter().filter(|r| r.pass).count();
        Self {
            passed,
            failed: reports.len() - passed,
            all_pass: passed == reports.len(),
            config_hash: hash.map(str::to_string),
            reports,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("summary serializes")
    }

    /// CSV `name,statistic,threshold,pass,samples`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write_hash_line(&mut out, self.config_hash.as_deref())?;
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["name", "statistic", "threshold", "pass", "samples"])?;
        for r in &self.reports {
            wtr.write_record([
                r.name.clone(),
                fmt_f64(r.statistic),
                fmt_f64(r.threshold),
                r.pass.to_string(),
                r.samples.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    #[test]
    fn pass_iff_within_threshold() {
        assert!(CheckReport::new("a", 1.0, 1.0, 1).pass);
        assert!(!CheckReport::new("a", 1.0 + 1e-15, 1.0, 1).pass);
        assert!(!CheckReport::new("a", f64::NAN, 1.0, 1).pass);
    }

    #[test]
    fn failures_do_not_abort_the_suite() {
        let mut suite = CheckSuite::new();
        suite.add("c", || Ok(CheckReport::new("", 0.5, 1.0, 10)));
        suite.add("a", || Err(Error::InvalidParameter("boom".into())));
        suite.add("b", || panic!("bad check"));
        let s = suite.run(Some("abc"));
        assert_eq!((s.passed, s.failed, s.all_pass), (1, 2, false));
        let names: Vec<&str> = s.reports.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert!(s.reports.iter().all(|r| r.config_hash.as_deref() == Some("abc")));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("# config_hash: abc\nname,statistic"));
    }

    #[test]
    fn empty_suite_passes() {
        let s = CheckSuite::new().run(None);
        assert!(s.all_pass);
        assert!(s.reports.is_empty());
    }
}
