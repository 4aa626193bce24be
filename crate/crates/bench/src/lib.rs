//! Benchmark harness: task cases, a hermetic runner, baselines and failure
//! annotation.

pub mod annotate;
pub mod baselines;
pub mod case;
pub mod report;
pub mod runner;

pub use annotate::{AnnotateError, AnnotationStore, FailureAnnotation, FailureColumn, FailureTable, FailureType, Tier};
pub use case::{Category, Suite, SuiteError, TaskCase, ValidationSpec};
pub use report::{CaseSummary, Rate, RunResult, SuiteReport};
pub use runner::{run_suite_dir, BenchError, LlmSource, Method, Runner, RunnerOptions, DEFAULT_RUNS};
