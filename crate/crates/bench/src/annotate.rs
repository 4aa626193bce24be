//! Failure annotation of consistently failing cases and the failure table.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use sage_core::fixtures::{read_json, FixtureError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::SuiteReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "2")]
    Two,
    #[serde(rename = "3")]
    Three,
    #[serde(rename = "4")]
    Four,
    #[serde(rename = "NA")]
    NotApplicable,
}

impl Tier {
    pub fn label(self) -> &'static str {
        match self {
            Tier::One => "1",
            Tier::Two => "2",
            Tier::Three => "3",
            Tier::Four => "4",
            Tier::NotApplicable => "NA",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FailureType {
    Formatting,
    CommandUnderstanding,
    Planning,
    PlanExecution,
    ToolSelection,
    ToolPopulation,
    ApiRequest,
    CodeWriting,
    FaultyTool,
    #[serde(rename = "LLMLimitation", alias = "LlmLimitation")]
    LlmLimitation,
    Hallucination,
    Other,
}

impl FailureType {
    /// Table order.
    pub const ALL: [FailureType; 12] = [
        FailureType::Formatting,
        FailureType::CommandUnderstanding,
        FailureType::Planning,
        FailureType::PlanExecution,
        FailureType::ToolSelection,
        FailureType::ToolPopulation,
        FailureType::ApiRequest,
        FailureType::CodeWriting,
        FailureType::FaultyTool,
        FailureType::LlmLimitation,
        FailureType::Hallucination,
        FailureType::Other,
    ];

    pub fn tier(self) -> Tier {
        use FailureType::*;
        match self {
            Formatting | CommandUnderstanding => Tier::One,
            Planning => Tier::Two,
            PlanExecution | ToolSelection | ToolPopulation | ApiRequest | CodeWriting => Tier::Three,
            FaultyTool | LlmLimitation | Hallucination => Tier::Four,
            Other => Tier::NotApplicable,
        }
    }

    pub fn label(self) -> &'static str {
        use FailureType::*;
        match self {
            Formatting => "Formatting",
            CommandUnderstanding => "Command understanding",
            Planning => "Planning",
            PlanExecution => "Plan execution",
            ToolSelection => "Tool selection",
            ToolPopulation => "Tool population",
            ApiRequest => "API request formatting",
            CodeWriting => "Code writing",
            FaultyTool => "Faulty tool",
            LlmLimitation => "LLM limitation",
            Hallucination => "Hallucination",
            Other => "Other",
        }
    }

    pub fn description(self) -> &'static str {
        use FailureType::*;
        match self {
            Formatting => "output does not follow the required step template",
            CommandUnderstanding => "the request is misread",
            Planning => "the plan is wrong or incomplete",
            PlanExecution => "a sound plan is carried out with steps missing",
            ToolSelection => "a wrong tool is chosen for a step",
            ToolPopulation => "a tool receives wrong arguments",
            ApiRequest => "a device request names the wrong attribute, command or component",
            CodeWriting => "generated condition code does not behave as intended",
            FaultyTool => "a tool itself fails, such as disambiguation picking the wrong device",
            LlmLimitation => "missing common knowledge or context length",
            Hallucination => "invented devices, components or requirements",
            Other => "anything else",
        }
    }
}

impl fmt::Display for FailureType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Type of the first mistake in a consistently failing case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureAnnotation {
    pub case_id: String,
    pub tier: Tier,
    #[serde(rename = "type")]
    pub failure_type: FailureType,
    #[serde(default)]
    pub note: String,
}

impl FailureAnnotation {
    /// Annotation with the tier implied by the type.
    pub fn new(case_id: impl Into<String>, failure_type: FailureType, note: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            tier: failure_type.tier(),
            failure_type,
            note: note.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("case '{0}' is not in the report")]
    UnknownCase(String),
    #[error("case '{case_id}' did not fail all {runs} runs ({passes} passed, {errored} errored); only consistent failures can be annotated")]
    NotConsistentlyFailing {
        case_id: String,
        passes: u32,
        errored: u32,
        runs: u32,
    },
    #[error("{failure_type} belongs to tier {expected}, not {given}")]
    TierMismatch {
        failure_type: FailureType,
        expected: Tier,
        given: Tier,
    },
    #[error(transparent)]
    Fixture(#[from] FixtureError),
}

/// Annotations for one suite report, persisted as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub annotations: Vec<FailureAnnotation>,
}

pub struct AnnotationStore {
    path: Option<PathBuf>,
    file: AnnotationFile,
}

impl AnnotationStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: AnnotationFile::default(),
        }
    }

    /// Opens the file, starting empty when it does not exist.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, AnnotateError> {
        let path = path.as_ref().to_path_buf();
        let file = if path.exists() {
            read_json(&path)?
        } else {
            AnnotationFile::default()
        };
        Ok(Self { path: Some(path), file })
    }

    pub fn annotations(&self) -> &[FailureAnnotation] {
        &self.file.annotations
    }

    /// Records an annotation, replacing any earlier one for the same case.
    pub fn annotate(&mut self, report: &SuiteReport, annotation: FailureAnnotation) -> Result<(), AnnotateError> {
        let case = report
            .case(&annotation.case_id)
            .ok_or_else(|| AnnotateError::UnknownCase(annotation.case_id.clone()))?;
        if !case.consistently_failing() {
            return Err(AnnotateError::NotConsistentlyFailing {
                case_id: case.case_id.clone(),
                passes: case.passes,
                errored: case.errored,
                runs: case.runs,
            });
        }
        let expected = annotation.failure_type.tier();
        if annotation.tier != expected {
            return Err(AnnotateError::TierMismatch {
                failure_type: annotation.failure_type,
                expected,
                given: annotation.tier,
            });
        }
        self.file.annotations.retain(|a| a.case_id != annotation.case_id);
        self.file.annotations.push(annotation);
        self.file.annotations.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        self.save()
    }

    fn save(&self) -> Result<(), AnnotateError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| FixtureError::io(dir, e))?;
        }
        let text = serde_json::to_string_pretty(&self.file).expect("annotations serialize");
        std::fs::write(path, text).map_err(|e| FixtureError::io(path, e))?;
        Ok(())
    }
}

/// One column of the failure table: a configuration's report and its
/// annotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureColumn {
    pub label: String,
    /// Consistently failing cases times runs.
    pub total_failures: u32,
    pub annotated_cases: u32,
    /// Consistently failing cases without an annotation.
    pub unannotated: Vec<String>,
    pub counts: BTreeMap<FailureType, u32>,
    /// Whole percentages per type; they sum to 100 when anything is
    /// annotated.
    pub percentages: BTreeMap<FailureType, u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTable {
    pub columns: Vec<FailureColumn>,
}

/// Largest-remainder rounding of `counts` to whole percentages.
fn percentages(counts: &BTreeMap<FailureType, u32>) -> BTreeMap<FailureType, u32> {
    let total: u32 = counts.values().sum();
    let mut out: BTreeMap<FailureType, u32> = FailureType::ALL.iter().map(|t| (*t, 0)).collect();
    if total == 0 {
        return out;
    }
    let mut rem = Vec::new();
    let mut assigned = 0;
    for t in FailureType::ALL {
        let c = counts.get(&t).copied().unwrap_or(0) * 100;
        out.insert(t, c / total);
        assigned += c / total;
        rem.push((c % total, t));
    }
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for (_, t) in rem.into_iter().take((100 - assigned) as usize) {
        *out.get_mut(&t).unwrap() += 1;
    }
    out
}

impl FailureColumn {
    pub fn new(label: impl Into<String>, report: &SuiteReport, annotations: &[FailureAnnotation]) -> Self {
        let failing: Vec<_> = report.cases.iter().filter(|c| c.consistently_failing()).collect();
        let mut counts: BTreeMap<FailureType, u32> = FailureType::ALL.iter().map(|t| (*t, 0)).collect();
        let mut unannotated = Vec::new();
        let mut annotated = 0;
        for c in &failing {
            match annotations.iter().find(|a| a.case_id == c.case_id) {
                Some(a) => {
                    *counts.get_mut(&a.failure_type).unwrap() += 1;
                    annotated += 1;
                }
                None => unannotated.push(c.case_id.clone()),
            }
        }
        Self {
            label: label.into(),
            total_failures: failing.len() as u32 * report.runs,
            annotated_cases: annotated,
            unannotated,
            percentages: percentages(&counts),
            counts,
        }
    }
}

impl FailureTable {
    pub fn new(columns: Vec<FailureColumn>) -> Self {
        Self { columns }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut header = format!("{:<6} {:<24}", "Tier", "Failure type");
        for c in &self.columns {
            let _ = write!(header, " {:>12}", c.label);
        }
        let _ = writeln!(out, "{header}");
        let mut totals = format!("{:<6} {:<24}", "", "Total failures");
        for c in &self.columns {
            let _ = write!(totals, " {:>12}", c.total_failures);
        }
        let _ = writeln!(out, "{totals}");
        let _ = writeln!(out, "{:<6} {:<24}", "", "Failure rate (%)");
        let mut last_tier = None;
        for t in FailureType::ALL {
            let tier = if last_tier == Some(t.tier()) { "" } else { t.tier().label() };
            last_tier = Some(t.tier());
            let mut row = format!("{:<6} {:<24}", tier, t.label());
            for c in &self.columns {
                let _ = write!(row, " {:>12}", c.percentages[&t]);
            }
            let _ = writeln!(out, "{row}");
        }
        for c in &self.columns {
            if !c.unannotated.is_empty() {
                let _ = writeln!(out, "{}: not yet annotated: {}", c.label, c.unannotated.join(", "));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers_follow_the_grouping() {
        let by_tier = |tier| FailureType::ALL.iter().filter(|t| t.tier() == tier).count();
        assert_eq!(
            [Tier::One, Tier::Two, Tier::Three, Tier::Four, Tier::NotApplicable].map(by_tier),
            [2, 1, 5, 3, 1]
        );
    }

    #[test]
    fn annotation_serializes_with_tier_strings() {
        let a = FailureAnnotation::new("x", FailureType::LlmLimitation, "");
        let v = serde_json::to_value(&a).unwrap();
        assert_eq!(v["tier"], "4");
        assert_eq!(v["type"], "LLMLimitation");
        let other: FailureAnnotation =
            serde_json::from_value(serde_json::json!({"case_id": "y", "tier": "NA", "type": "Other"})).unwrap();
        assert_eq!(other.tier, Tier::NotApplicable);
    }

    #[test]
    fn rounding_sums_to_one_hundred() {
        let counts: BTreeMap<_, _> = [
            (FailureType::Formatting, 1),
            (FailureType::Planning, 1),
            (FailureType::Other, 1),
        ]
        .into_iter()
        .collect();
        let p = percentages(&counts);
        assert_eq!(p.values().sum::<u32>(), 100);
        assert_eq!(p[&FailureType::Formatting], 34);
    }
}
