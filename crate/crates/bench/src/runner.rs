//! Hermetic case execution with repetitions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use sage_core::agent::AbortKind;
use sage_core::fixtures::FixtureError;
use sage_core::llm::{LlmError, LlmGateway, ScriptedBackend};
use sage_core::personalization::{fill_template, HumanMode};
use sage_core::sage::{BuildError, Sage, SageOptions, SessionError, SessionRequest};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{debug, info};

use crate::baselines::{self, BaselineError};
use crate::case::{AnswerMode, Suite, SuiteError, TaskCase, ValidationSpec};
use crate::report::{CaseSummary, RunResult, SuiteReport};

pub const DEFAULT_RUNS: u32 = 3;

/// Prompt used by the answer judge in `llm_judge` mode.
pub const JUDGE_TEMPLATE: &str = "You check whether a smart home assistant's answer contains the expected information.

User request: {command}
Expected information: {expected}
Assistant answer: {answer}

Does the answer contain the expected information? Reply with only yes or no.
Verdict:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sage,
    OnePrompt,
    Sasha,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sage, Method::OnePrompt, Method::Sasha];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sage => "sage",
            Method::OnePrompt => "one_prompt",
            Method::Sasha => "sasha",
        }
    }

    /// Replay file holding this method's script for a case.
    pub fn replay_file(self, case_id: &str) -> String {
        match self {
            Method::Sage => format!("{case_id}.json"),
            m => format!("{case_id}.{}.json", m.as_str()),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "sage" => Ok(Method::Sage),
            "one_prompt" | "oneprompt" => Ok(Method::OnePrompt),
            "sasha" => Ok(Method::Sasha),
            _ => Err(format!("unknown method '{s}' (expected sage, one_prompt or sasha)")),
        }
    }
}

/// Where each run's LLM comes from.
#[derive(Clone)]
pub enum LlmSource {
    /// Per-case replay files in the given directory, or the suite's
    /// `replays/` when `None`. Each run gets a fresh backend.
    Scripted(Option<PathBuf>),
    /// One shared gateway, typically a live backend.
    Gateway(Arc<LlmGateway>),
}

impl fmt::Debug for LlmSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LlmSource::Scripted(dir) => write!(f, "Scripted({dir:?})"),
            LlmSource::Gateway(g) => write!(f, "Gateway({})", g.backend_name()),
        }
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Suite(#[from] SuiteError),
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("{0}")]
    Setup(String),
}

#[derive(Clone)]
pub struct RunnerOptions {
    pub runs: u32,
    pub method: Method,
    /// Judge gateway for `llm_judge` answers; such cases error without one.
    pub judge: Option<Arc<LlmGateway>>,
    /// Directory receiving one trace file per run.
    pub trace_dir: Option<PathBuf>,
    /// One isolated service per case, run on separate threads.
    pub parallel: bool,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            method: Method::Sage,
            judge: None,
            trace_dir: None,
            parallel: false,
        }
    }
}

pub struct Runner {
    home: PathBuf,
    sage: Sage,
    llm: LlmSource,
    options: RunnerOptions,
    _state: tempfile::TempDir,
}

enum Outcome {
    Pass,
    Fail(String),
    Errored(String),
}

fn placeholder_gateway() -> Arc<LlmGateway> {
    Arc::new(LlmGateway::new(Arc::new(ScriptedBackend::new(vec![]))))
}

fn load_sage(home: &Path) -> Result<(Sage, tempfile::TempDir), BenchError> {
    let state = tempfile::tempdir().map_err(|e| BenchError::Setup(format!("state dir: {e}")))?;
    let sage = Sage::load(
        home,
        placeholder_gateway(),
        SageOptions {
            state_dir: Some(state.path().to_path_buf()),
            seed_memories: false,
            ..SageOptions::default()
        },
    )?;
    Ok((sage, state))
}

fn values_match(actual: &Value, expected: &Value) -> bool {
    match (actual.as_f64(), expected.as_f64()) {
        (Some(a), Some(b)) => (a - b).abs() < 1e-9,
        _ => actual == expected,
    }
}

fn session_failure(e: &SessionError) -> Outcome {
    match e {
        SessionError::Aborted { abort, .. } if abort.kind == AbortKind::Gateway => Outcome::Errored(abort.to_string()),
        e => Outcome::Fail(e.to_string()),
    }
}

fn llm_failure(e: &LlmError) -> Outcome {
    Outcome::Errored(format!("llm: {e}"))
}

impl Runner {
    /// Loads the home fixtures once; every run restores them.
    pub fn new(home: impl AsRef<Path>, llm: LlmSource, options: RunnerOptions) -> Result<Self, BenchError> {
        if options.runs == 0 {
            return Err(BenchError::Setup("runs must be at least 1".into()));
        }
        let home = home.as_ref().to_path_buf();
        let (sage, state) = load_sage(&home)?;
        Ok(Self {
            home,
            sage,
            llm,
            options,
            _state: state,
        })
    }

    pub fn sage(&self) -> &Sage {
        &self.sage
    }

    pub fn options(&self) -> &RunnerOptions {
        &self.options
    }

    fn replay_path(&self, suite: &Suite, case: &TaskCase) -> Option<PathBuf> {
        match &self.llm {
            LlmSource::Scripted(dir) => {
                let dir = dir.clone().unwrap_or_else(|| suite.replay_dir());
                Some(dir.join(self.options.method.replay_file(&case.id)))
            }
            LlmSource::Gateway(_) => None,
        }
    }

    /// True when the case has no script for a baseline method.
    fn skips(&self, suite: &Suite, case: &TaskCase) -> bool {
        self.options.method != Method::Sage && self.replay_path(suite, case).is_some_and(|p| !p.exists())
    }

    fn gateway_for_run(&self, replay: Option<&Path>) -> Result<Arc<LlmGateway>, String> {
        match (&self.llm, replay) {
            (LlmSource::Gateway(g), _) => Ok(g.clone()),
            (LlmSource::Scripted(_), Some(p)) => {
                let backend = ScriptedBackend::from_file(p).map_err(|e| format!("replay {}: {e}", p.display()))?;
                Ok(Arc::new(LlmGateway::new(Arc::new(backend))))
            }
            (LlmSource::Scripted(_), None) => Err("no replay configured".into()),
        }
    }

    fn prepare(&self, case: &TaskCase) -> Result<(), String> {
        self.sage.reset().map_err(|e| format!("reset: {e}"))?;
        if self.sage.hub().snapshot() != *self.sage.base_state() {
            return Err("hub state differs from the base snapshot after reset".into());
        }
        for (path, value) in case.initial_device_states.iter() {
            self.sage
                .hub()
                .mutate(path, value.clone())
                .map_err(|e| format!("overlay {path}: {}", e.message))?;
        }
        self.sage
            .memory()
            .seed(&case.memory_seed)
            .map_err(|e| format!("memory seed: {e}"))?;
        Ok(())
    }

    fn write_trace(&self, case: &TaskCase, run: u32, trace: &Value) -> Option<String> {
        let dir = self.options.trace_dir.as_ref()?;
        let name = format!("{}-{}-run{run}.json", case.id, self.options.method);
        let path = dir.join(&name);
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(&path, serde_json::to_vec_pretty(trace).unwrap_or_default()));
        match written {
            Ok(()) => Some(path.display().to_string()),
            Err(e) => {
                tracing::warn!(path = %path.display(), error = %e, "could not write trace");
                None
            }
        }
    }

    fn judge(&self, case: &TaskCase, expected: &str, answer: &str) -> Outcome {
        let Some(judge) = &self.options.judge else {
            return Outcome::Errored("llm_judge validation needs a judge backend".into());
        };
        let prompt = fill_template(
            JUDGE_TEMPLATE,
            &[("command", &case.input_command), ("expected", expected), ("answer", answer)],
        );
        match judge.complete(&prompt) {
            Ok(r) if r.text.trim().to_ascii_lowercase().starts_with("yes") => Outcome::Pass,
            Ok(r) => Outcome::Fail(format!("judge rejected the answer: {}", r.text.trim())),
            Err(e) => llm_failure(&e),
        }
    }

    fn validate(&self, case: &TaskCase, answer: &str, fires: u32) -> Outcome {
        if let Some(expected) = case.expected_trigger_fires {
            if fires != expected {
                return Outcome::Fail(format!("expected {expected} trigger fire(s), saw {fires}"));
            }
        }
        match &case.validation {
            ValidationSpec::DevicePredicates(preds) => {
                for p in preds {
                    match self.sage.hub().read(&p.path) {
                        Ok(v) if values_match(&v, &p.expected_value) => {}
                        Ok(v) => return Outcome::Fail(format!("{} is {v}, expected {}", p.path, p.expected_value)),
                        Err(e) => return Outcome::Fail(format!("{}: {}", p.path, e.message)),
                    }
                }
                Outcome::Pass
            }
            ValidationSpec::AnswerContains { expected_info, mode } => match mode {
                AnswerMode::Substring => {
                    if answer.to_lowercase().contains(&expected_info.to_lowercase()) {
                        Outcome::Pass
                    } else {
                        Outcome::Fail(format!("answer does not contain '{expected_info}'"))
                    }
                }
                AnswerMode::LlmJudge => self.judge(case, expected_info, answer),
            },
        }
    }

    /// Applies scheduled events and polls; returns the fire count.
    fn run_ticks(&self, case: &TaskCase, trace: &mut Vec<Value>) -> Result<u32, Outcome> {
        let mut fires = 0;
        for tick in 0..case.total_ticks() {
            for ev in case.scheduled_events.iter().filter(|e| e.after_tick == tick) {
                self.sage
                    .hub()
                    .mutate(&ev.mutate.path, ev.mutate.value.clone())
                    .map_err(|e| Outcome::Errored(format!("scheduled event {}: {}", ev.mutate.path, e.message)))?;
            }
            let outcome = self.sage.poll_tick();
            for s in outcome.sessions {
                fires += 1;
                match s.result {
                    Ok(r) => trace.push(serde_json::to_value(&r.trace).unwrap_or(Value::Null)),
                    Err(e) => {
                        if let Some(t) = e.trace() {
                            trace.push(serde_json::to_value(t).unwrap_or(Value::Null));
                        }
                        if let o @ Outcome::Errored(_) = session_failure(&e) {
                            return Err(o);
                        }
                    }
                }
            }
        }
        Ok(fires)
    }

    fn run_once(&self, case: &TaskCase, run: u32, replay: Option<&Path>) -> RunResult {
        let mut result = RunResult {
            case_id: case.id.clone(),
            run_index: run,
            passed: false,
            errored: None,
            answer: String::new(),
            trigger_fires: 0,
            failure: None,
            trace_ref: None,
        };
        let mut traces = Vec::new();
        let outcome = (|| {
            let llm = self.gateway_for_run(replay).map_err(Outcome::Errored)?;
            self.prepare(case).map_err(Outcome::Errored)?;
            self.sage.set_llm(llm.clone());
            let main = match self.options.method {
                Method::Sage => {
                    let req = SessionRequest::new(case.user_id.clone(), case.input_command.clone())
                        .with_session_id(format!("{}-run{run}", case.id))
                        .with_human(HumanMode::Disabled);
                    match self.sage.run_session(req) {
                        Ok(r) => {
                            traces.push(serde_json::to_value(&r.trace).unwrap_or(Value::Null));
                            Ok(r.answer)
                        }
                        Err(e) => {
                            if let Some(t) = e.trace() {
                                traces.push(serde_json::to_value(t).unwrap_or(Value::Null));
                            }
                            Err(session_failure(&e))
                        }
                    }
                }
                m => {
                    let hub = self.sage.hub();
                    let r = match m {
                        Method::OnePrompt => baselines::one_prompt(hub, &llm, case),
                        _ => baselines::sasha(hub, &llm, case),
                    };
                    match r {
                        Ok(r) => {
                            traces.push(serde_json::to_value(&r).unwrap_or(Value::Null));
                            Ok(r.answer)
                        }
                        Err(BaselineError::Llm(e)) => Err(llm_failure(&e)),
                        Err(BaselineError::Setup(e)) => Err(Outcome::Errored(e)),
                        Err(BaselineError::Output(e)) => Err(Outcome::Fail(e)),
                    }
                }
            };
            let answer = main?;
            result.answer = answer.clone();
            let fires = self.run_ticks(case, &mut traces)?;
            result.trigger_fires = fires;
            Ok::<_, Outcome>(self.validate(case, &answer, fires))
        })();
        let outcome = outcome.unwrap_or_else(|o| o);
        match outcome {
            Outcome::Pass => result.passed = true,
            Outcome::Fail(m) => result.failure = Some(m),
            Outcome::Errored(m) => result.errored = Some(m),
        }
        self.sage.set_llm(placeholder_gateway());
        result.trace_ref = self.write_trace(case, run, &Value::Array(traces));
        debug!(case = %case.id, run, passed = result.passed, "run finished");
        result
    }

    /// Runs one case `runs` times; `None` when the method has no script
    /// for it.
    pub fn run_case(&self, suite: &Suite, case: &TaskCase) -> Option<CaseSummary> {
        if self.skips(suite, case) {
            return None;
        }
        let replay = self.replay_path(suite, case);
        let results: Vec<RunResult> = (0..self.options.runs)
            .map(|r| self.run_once(case, r, replay.as_deref()))
            .collect();
        Some(CaseSummary {
            case_id: case.id.clone(),
            categories: case.categories.clone(),
            passes: results.iter().filter(|r| r.passed).count() as u32,
            errored: results.iter().filter(|r| r.errored.is_some()).count() as u32,
            runs: self.options.runs,
            results,
        })
    }

    pub fn run_suite(&self, suite: &Suite) -> Result<SuiteReport, BenchError> {
        let outcomes: Vec<(String, Option<CaseSummary>)> = if self.options.parallel {
            self.run_parallel(suite)?
        } else {
            suite
                .cases
                .iter()
                .map(|c| (c.case.id.clone(), self.run_case(suite, &c.case)))
                .collect()
        };
        let mut cases = Vec::new();
        let mut skipped = Vec::new();
        for (id, o) in outcomes {
            match o {
                Some(s) => cases.push(s),
                None => skipped.push(id),
            }
        }
        if cases.is_empty() {
            return Err(BenchError::Setup(format!(
                "no case in {} has a script for {}",
                suite.dir.display(),
                self.options.method
            )));
        }
        let report = SuiteReport::new(&suite.name, self.options.method, self.options.runs, cases, skipped);
        info!(suite = %suite.name, method = %self.options.method, rate = report.overall.rate, "suite finished");
        Ok(report)
    }

    fn run_parallel(&self, suite: &Suite) -> Result<Vec<(String, Option<CaseSummary>)>, BenchError> {
        std::thread::scope(|scope| {
            let handles: Vec<_> = suite
                .cases
                .iter()
                .map(|c| {
                    scope.spawn(move || {
                        let runner = Runner::new(&self.home, self.llm.clone(), self.options.clone())?;
                        Ok::<_, BenchError>((c.case.id.clone(), runner.run_case(suite, &c.case)))
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().map_err(|_| BenchError::Setup("case worker panicked".into()))?)
                .collect()
        })
    }
}

/// Loads and runs a suite directory in one call.
pub fn run_suite_dir(
    home: impl AsRef<Path>,
    suite_dir: impl AsRef<Path>,
    llm: LlmSource,
    options: RunnerOptions,
) -> Result<SuiteReport, BenchError> {
    let suite = Suite::load(suite_dir)?;
    Runner::new(home, llm, options)?.run_suite(&suite)
}
