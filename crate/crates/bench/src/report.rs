//! Binary run results and their aggregation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::case::Category;
use crate::runner::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub case_id: String,
    pub run_index: u32,
    pub passed: bool,
    /// Infrastructure problem; the run is neither a pass nor a failure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub errored: Option<String>,
    #[serde(default)]
    pub answer: String,
    #[serde(default)]
    pub trigger_fires: u32,
    /// Why validation failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub categories: BTreeSet<Category>,
    pub passes: u32,
    pub errored: u32,
    pub runs: u32,
    pub results: Vec<RunResult>,
}

impl CaseSummary {
    /// Failed every run without infrastructure errors.
    pub fn consistently_failing(&self) -> bool {
        self.runs > 0 && self.passes == 0 && self.errored == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub cases: u32,
    pub passed: u32,
    pub total: u32,
    pub rate: f64,
    /// Lowest and highest single-run success rates.
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub method: Method,
    pub runs: u32,
    pub cases: Vec<CaseSummary>,
    /// Cases without a replay for this method.
    #[serde(default)]
    pub skipped: Vec<String>,
    pub overall: Rate,
    pub per_category: BTreeMap<Category, Rate>,
}

fn rate_of<'a>(cases: impl Iterator<Item = &'a CaseSummary> + Clone, runs: u32) -> Rate {
    let n = cases.clone().count() as u32;
    let passed: u32 = cases.clone().map(|c| c.passes).sum();
    let total = n * runs;
    let per_run: Vec<f64> = (0..runs)
        .map(|r| {
            let p = cases
                .clone()
                .filter(|c| c.results.iter().any(|x| x.run_index == r && x.passed))
                .count();
            if n == 0 {
                0.0
            } else {
                p as f64 / n as f64
            }
        })
        .collect();
    Rate {
        cases: n,
        passed,
        total,
        rate: if total == 0 { 0.0 } else { passed as f64 / total as f64 },
        min: per_run.iter().copied().fold(f64::INFINITY, f64::min).min(1.0),
        max: per_run.iter().copied().fold(0.0, f64::max),
    }
}

impl SuiteReport {
    pub fn new(suite: &str, method: Method, runs: u32, cases: Vec<CaseSummary>, skipped: Vec<String>) -> Self {
        let overall = rate_of(cases.iter(), runs);
        let per_category = Category::ALL
            .iter()
            .filter_map(|cat| {
                let subset = cases.iter().filter(|c| c.categories.contains(cat));
                (subset.clone().count() > 0).then(|| (*cat, rate_of(subset, runs)))
            })
            .collect();
        Self {
            suite: suite.to_string(),
            method,
            runs,
            cases,
            skipped,
            overall,
            per_category,
        }
    }

    pub fn case(&self, id: &str) -> Option<&CaseSummary> {
        self.cases.iter().find(|c| c.case_id == id)
    }

    pub fn failing_cases(&self) -> Vec<&CaseSummary> {
        self.cases.iter().filter(|c| c.passes < c.runs).collect()
    }

    pub fn errored_runs(&self) -> Vec<&RunResult> {
        self.cases
            .iter()
            .flat_map(|c| c.results.iter())
            .filter(|r| r.errored.is_some())
            .collect()
    }

    pub fn render_table(&self) -> String {
        let pct = |x: f64| format!("{:.1}%", x * 100.0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Suite {} ({}), {} cases x {} runs",
            self.suite,
            self.method,
            self.cases.len(),
            self.runs
        );
        let _ = writeln!(out, "{:<20} {:>5} {:>8} {:>8} {:>8}", "Category", "Cases", "Success", "Min", "Max");
        for (cat, r) in &self.per_category {
            let _ = writeln!(
                out,
                "{:<20} {:>5} {:>8} {:>8} {:>8}",
                cat.label(),
                r.cases,
                pct(r.rate),
                pct(r.min),
                pct(r.max)
            );
        }
        let r = &self.overall;
        let _ = writeln!(
            out,
            "{:<20} {:>5} {:>8} {:>8} {:>8}",
            "Overall",
            r.cases,
            pct(r.rate),
            pct(r.min),
            pct(r.max)
        );
        let failing = self.failing_cases();
        if failing.is_empty() {
            let _ = writeln!(out, "Failing cases: none");
        } else {
            let _ = writeln!(out, "Failing cases:");
            for c in failing {
                let reason = c
                    .results
                    .iter()
                    .find_map(|r| r.errored.as_ref().or(r.failure.as_ref()))
                    .cloned()
                    .unwrap_or_default();
                let _ = writeln!(out, "  {} ({}/{} passed): {}", c.case_id, c.passes, c.runs, reason);
            }
        }
        let errored = self.errored_runs().len();
        if errored > 0 {
            let _ = writeln!(out, "Errored runs: {errored}");
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(out, "Skipped (no replay): {}", self.skipped.join(", "));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(id: &str, cats: &[Category], passed: &[bool]) -> CaseSummary {
        CaseSummary {
            case_id: id.into(),
            categories: cats.iter().copied().collect(),
            passes: passed.iter().filter(|p| **p).count() as u32,
            errored: 0,
            runs: passed.len() as u32,
            results: passed
                .iter()
                .enumerate()
                .map(|(i, p)| RunResult {
                    case_id: id.into(),
                    run_index: i as u32,
                    passed: *p,
                    errored: None,
                    answer: String::new(),
                    trigger_fires: 0,
                    failure: None,
                    trace_ref: None,
                })
                .collect(),
        }
    }

    #[test]
    fn rates_and_bars() {
        let r = SuiteReport::new(
            "s",
            Method::Sage,
            3,
            vec![
                summary("a", &[Category::DirectCommand], &[true, true, true]),
                summary("b", &[Category::Persistence], &[true, false, false]),
            ],
            vec![],
        );
        assert_eq!(r.overall.passed, 4);
        assert_eq!(r.overall.total, 6);
        assert!((r.overall.rate - 4.0 / 6.0).abs() < 1e-12);
        assert_eq!((r.overall.min, r.overall.max), (0.5, 1.0));
        assert_eq!(r.per_category[&Category::Persistence].rate, 1.0 / 3.0);
        assert!(!r.case("b").unwrap().consistently_failing());
        assert!(r.render_table().contains("b (1/3 passed)"));
    }
}
