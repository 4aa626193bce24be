//! Completion gateway over interchangeable backends.
//!
//! Three backends sit behind [`LlmBackend`]: a live OpenAI-compatible
//! chat-completion client, a deterministic [`ScriptedBackend`] driven by a
//! replay file, and a [`RecordingBackend`] that forwards to another backend
//! and persists every exchange as an exact-hash replay rule.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Default context budget, in approximate tokens.
pub const DEFAULT_CONTEXT_LIMIT_TOKENS: usize = 8000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub text: String,
    /// Confidence reported by the backend, when it exposes one. Recorded in
    /// traces; no decision reads it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("no replay rule matches prompt (hash {hash}): {preview}")]
    Unmatched { hash: String, preview: String },
    #[error("llm gateway error: {message}")]
    Gateway { message: String, retriable: bool },
    #[error("prompt of ~{estimated} tokens exceeds the context limit of {limit} tokens")]
    Oversize { estimated: usize, limit: usize },
    #[error("completion was cut off at the output token limit")]
    Truncated,
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("replay file {path}: {message}")]
    ReplayFile { path: String, message: String },
}

impl LlmError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, LlmError::Gateway { retriable: true, .. })
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError>;

    fn name(&self) -> &str {
        "llm"
    }
}

/// Whitespace-collapsed, lowercased form used for replay matching.
pub fn normalize_prompt(prompt: &str) -> String {
    let mut out = String::with_capacity(prompt.len());
    for word in prompt.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Hex SHA-256 of the normalized prompt.
pub fn prompt_hash(prompt: &str) -> String {
    let digest = Sha256::digest(normalize_prompt(prompt).as_bytes());
    let mut hex = String::with_capacity(64);
    for byte in digest.iter() {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

/// Rough token estimate (characters / 4, rounded up).
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayKey {
    ExactHash(String),
    /// Every pattern must occur in the normalized prompt. An empty list
    /// matches any prompt.
    Patterns(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRule {
    pub key: ReplayKey,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probability: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_uses: Option<u32>,
}

impl ReplayRule {
    pub fn patterns<I, S>(patterns: I, response: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            key: ReplayKey::Patterns(patterns.into_iter().map(Into::into).collect()),
            response: response.into(),
            probability: None,
            max_uses: None,
        }
    }

    pub fn once(mut self) -> Self {
        self.max_uses = Some(1);
        self
    }

    fn matches(&self, normalized: &str, hash: &str) -> bool {
        match &self.key {
            ReplayKey::ExactHash(h) => h.eq_ignore_ascii_case(hash),
            ReplayKey::Patterns(patterns) => patterns
                .iter()
                .all(|p| normalized.contains(&normalize_prompt(p))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub rules: Vec<ReplayRule>,
}

impl ReplayFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::ReplayFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| LlmError::ReplayFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LlmError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("replay file serializes");
        std::fs::write(path, text + "\n").map_err(|e| LlmError::ReplayFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Deterministic backend: returns the response of the first rule that
/// matches the prompt and still has uses left.
pub struct ScriptedBackend {
    rules: Vec<ReplayRule>,
    state: Mutex<ScriptState>,
}

#[derive(Default)]
struct ScriptState {
    uses: Vec<u32>,
    prompts: Vec<String>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ReplayRule>) -> Self {
        let uses = vec![0; rules.len()];
        Self {
            rules,
            state: Mutex::new(ScriptState {
                uses,
                prompts: Vec::new(),
            }),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        Ok(Self::new(ReplayFile::load(path)?.rules))
    }

    /// Catch-all rules consumed strictly in order.
    pub fn sequence<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::new(
            responses
                .into_iter()
                .map(|r| ReplayRule::patterns(Vec::<String>::new(), r).once())
                .collect(),
        )
    }

    /// Every prompt received so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.state.lock().prompts.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().prompts.len()
    }

    /// Number of rules that can still fire.
    pub fn remaining_rules(&self) -> usize {
        let state = self.state.lock();
        self.rules
            .iter()
            .zip(&state.uses)
            .filter(|(r, used)| r.max_uses.is_none_or(|m| **used < m))
            .count()
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError> {
        let normalized = normalize_prompt(&request.prompt);
        let hash = prompt_hash(&request.prompt);
        let mut state = self.state.lock();
        state.prompts.push(request.prompt.clone());
        for (idx, rule) in self.rules.iter().enumerate() {
            if rule.max_uses.is_some_and(|m| state.uses[idx] >= m) {
                continue;
            }
            if rule.matches(&normalized, &hash) {
                state.uses[idx] += 1;
                return Ok(LlmResponse {
                    text: rule.response.clone(),
                    probability: rule.probability,
                });
            }
        }
        let preview: String = request.prompt.chars().take(160).collect();
        Err(LlmError::Unmatched { hash, preview })
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Forwards to another backend and appends each exchange to a replay file.
pub struct RecordingBackend {
    inner: Arc<dyn LlmBackend>,
    path: PathBuf,
    recorded: Mutex<ReplayFile>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn LlmBackend>, path: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            path: path.into(),
            recorded: Mutex::new(ReplayFile {
                description: Some("recorded session".into()),
                rules: Vec::new(),
            }),
        }
    }

    pub fn recorded(&self) -> ReplayFile {
        self.recorded.lock().clone()
    }
}

impl LlmBackend for RecordingBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let mut recorded = self.recorded.lock();
        recorded.rules.push(ReplayRule {
            key: ReplayKey::ExactHash(prompt_hash(&request.prompt)),
            response: response.text.clone(),
            probability: response.probability,
            max_uses: Some(1),
        });
        recorded.save(&self.path)?;
        Ok(response)
    }

    fn name(&self) -> &str {
        "recording"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "LiveConfig::default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "LiveConfig::default_max_retries")]
    pub max_retries: u32,
    /// Ask the server for token log-probabilities so a response probability
    /// can be reported. Not every compatible server accepts this.
    #[serde(default)]
    pub request_logprobs: bool,
}

impl LiveConfig {
    fn default_timeout_secs() -> u64 {
        60
    }

    fn default_max_retries() -> u32 {
        3
    }

    /// Reads `SAGE_LLM_BASE_URL`, `SAGE_LLM_MODEL`, `SAGE_LLM_API_KEY` and
    /// `SAGE_LLM_TIMEOUT_SECS`.
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        Self {
            base_url: var("SAGE_LLM_BASE_URL").unwrap_or_else(|| "https://api.openai.com/v1".into()),
            model: var("SAGE_LLM_MODEL").unwrap_or_else(|| "gpt-4".into()),
            api_key: var("SAGE_LLM_API_KEY").or_else(|| var("OPENAI_API_KEY")),
            timeout_secs: var("SAGE_LLM_TIMEOUT_SECS")
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(Self::default_timeout_secs),
            max_retries: Self::default_max_retries(),
            request_logprobs: false,
        }
    }
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    logprobs: bool,
}

#[derive(Debug, Serialize)]
struct ChatMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChatResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Vec<TokenLogprob>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

/// OpenAI-compatible `/chat/completions` client. The prompt is sent as a
/// single user message.
pub struct LiveBackend {
    config: LiveConfig,
    http: reqwest::blocking::Client,
}

impl LiveBackend {
    pub fn new(config: LiveConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Gateway {
                message: e.to_string(),
                retriable: false,
            })?;
        Ok(Self { config, http })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError> {
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
            stop: &request.stop_sequences,
            logprobs: self.config.request_logprobs,
        };
        let mut builder = self.http.post(self.endpoint()).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| LlmError::Gateway {
            message: e.to_string(),
            retriable: true,
        })?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(LlmError::Gateway {
                message: format!("HTTP {}: {}", status.as_u16(), text.trim()),
                retriable: status.is_server_error() || status.as_u16() == 429,
            });
        }
        let parsed: ChatResponse = response.json().map_err(|e| LlmError::Gateway {
            message: format!("malformed completion body: {e}"),
            retriable: false,
        })?;
        let choice = parsed.choices.into_iter().next().ok_or_else(|| LlmError::Gateway {
            message: "completion has no choices".into(),
            retriable: false,
        })?;
        if choice.finish_reason.as_deref() == Some("length") {
            return Err(LlmError::Truncated);
        }
        let probability = choice
            .logprobs
            .filter(|lp| !lp.content.is_empty())
            .map(|lp| lp.content.iter().map(|t| t.logprob).sum::<f64>().exp());
        Ok(LlmResponse {
            text: choice.message.content.unwrap_or_default(),
            probability,
        })
    }
}

impl LlmBackend for LiveBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<LlmResponse, LlmError> {
        let mut delay = Duration::from_millis(500);
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Err(e) if e.is_retriable() && attempt < self.config.max_retries => {
                    tracing::warn!(attempt, error = %e, "retrying completion");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn name(&self) -> &str {
        "live"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySettings {
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub context_limit_tokens: usize,
    pub stop_sequences: Vec<String>,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_output_tokens: 1024,
            context_limit_tokens: DEFAULT_CONTEXT_LIMIT_TOKENS,
            stop_sequences: vec!["\nObservation:".into()],
        }
    }
}

/// Uniform completion entry point used by agents and tools.
pub struct LlmGateway {
    backend: Arc<dyn LlmBackend>,
    settings: GatewaySettings,
    calls: AtomicU64,
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn LlmBackend>) -> Self {
        Self::with_settings(backend, GatewaySettings::default())
    }

    pub fn with_settings(backend: Arc<dyn LlmBackend>, settings: GatewaySettings) -> Self {
        Self {
            backend,
            settings,
            calls: AtomicU64::new(0),
        }
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Number of completions issued through this gateway.
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn complete(&self, prompt: &str) -> Result<LlmResponse, LlmError> {
        if prompt.trim().is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let estimated = estimate_tokens(prompt);
        if estimated > self.settings.context_limit_tokens {
            return Err(LlmError::Oversize {
                estimated,
                limit: self.settings.context_limit_tokens,
            });
        }
        let request = CompletionRequest {
            prompt: prompt.to_string(),
            temperature: self.settings.temperature,
            stop_sequences: self.settings.stop_sequences.clone(),
            max_output_tokens: self.settings.max_output_tokens,
        };
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.backend.complete(&request)?;
        if response.text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(response)
    }
}

/// Anything that can answer a prompt.
pub trait Completer {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, LlmError>;
}

impl Completer for LlmGateway {
    fn complete(&self, prompt: &str) -> Result<LlmResponse, LlmError> {
        LlmGateway::complete(self, prompt)
    }
}

/// Backend selection shared by the service config and the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmSpec {
    /// Replay file; every prompt must match one of its rules.
    Scripted { replay: PathBuf },
    /// OpenAI-compatible server. Unset fields come from the environment.
    Live {
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default)]
        model: Option<String>,
        /// Name of the environment variable holding the API key.
        #[serde(default)]
        api_key_env: Option<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    /// Live backend whose exchanges are appended to a replay file.
    Record { replay: PathBuf },
}

impl LlmSpec {
    fn live_config(&self) -> LiveConfig {
        let mut cfg = LiveConfig::from_env();
        if let LlmSpec::Live {
            base_url,
            model,
            api_key_env,
            timeout_secs,
        } = self
        {
            if let Some(u) = base_url {
                cfg.base_url = u.clone();
            }
            if let Some(m) = model {
                cfg.model = m.clone();
            }
            if let Some(var) = api_key_env {
                cfg.api_key = std::env::var(var).ok().filter(|v| !v.is_empty());
            }
            if let Some(t) = timeout_secs {
                cfg.timeout_secs = *t;
            }
        }
        cfg
    }

    pub fn backend(&self) -> Result<Arc<dyn LlmBackend>, LlmError> {
        Ok(match self {
            LlmSpec::Scripted { replay } => Arc::new(ScriptedBackend::from_file(replay)?),
            LlmSpec::Live { .. } => Arc::new(LiveBackend::new(self.live_config())?),
            LlmSpec::Record { replay } => {
                let live: Arc<dyn LlmBackend> = Arc::new(LiveBackend::new(self.live_config())?);
                Arc::new(RecordingBackend::new(live, replay))
            }
        })
    }

    pub fn gateway(&self) -> Result<Arc<LlmGateway>, LlmError> {
        Ok(Arc::new(LlmGateway::new(self.backend()?)))
    }
}

impl std::str::FromStr for LlmSpec {
    type Err = String;

    /// `scripted:<file>`, `record:<file>` or `live`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        match (kind, arg) {
            ("scripted", Some(p)) if !p.is_empty() => Ok(LlmSpec::Scripted { replay: p.into() }),
            ("record", Some(p)) if !p.is_empty() => Ok(LlmSpec::Record { replay: p.into() }),
            ("live", None) => Ok(LlmSpec::Live {
                base_url: None,
                model: None,
                api_key_env: None,
                timeout_secs: None,
            }),
            _ => Err(format!("invalid LLM backend '{s}'; use scripted:<file>, record:<file> or live")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn llm_spec_strings() {
        assert_eq!(
            "scripted:a/b.json".parse::<LlmSpec>().unwrap(),
            LlmSpec::Scripted { replay: "a/b.json".into() }
        );
        assert!(matches!("live".parse::<LlmSpec>().unwrap(), LlmSpec::Live { .. }));
        assert!("scripted:".parse::<LlmSpec>().is_err());
        assert!("gpt".parse::<LlmSpec>().is_err());
    }

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            temperature: 0.0,
            stop_sequences: vec![],
            max_output_tokens: 64,
        }
    }

    #[test]
    fn normalization_collapses_whitespace_and_case() {
        assert_eq!(normalize_prompt("  Turn\n\tON  the Light "), "turn on the light");
        assert_eq!(prompt_hash("a  B"), prompt_hash("A b"));
        assert_ne!(prompt_hash("a b"), prompt_hash("ab"));
    }

    #[test]
    fn pattern_rule_hits_and_first_match_wins() {
        let backend = ScriptedBackend::new(vec![
            ReplayRule::patterns(["fancy light", "turn on tool"], "first"),
            ReplayRule::patterns(["fancy light"], "second"),
        ]);
        let text = backend
            .complete(&request("... Turn on tool ...\nUser input: Turn on the FANCY   light"))
            .unwrap()
            .text;
        assert_eq!(text, "first");
        assert_eq!(backend.complete(&request("fancy light")).unwrap().text, "second");
    }

    #[test]
    fn empty_rule_set_is_unmatched() {
        let backend = ScriptedBackend::new(vec![]);
        let err = backend.complete(&request("anything")).unwrap_err();
        match err {
            LlmError::Unmatched { hash, .. } => assert_eq!(hash, prompt_hash("anything")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn max_uses_exhausts_rules_in_order() {
        let backend = ScriptedBackend::sequence(["one", "two"]);
        assert_eq!(backend.complete(&request("p")).unwrap().text, "one");
        assert_eq!(backend.complete(&request("p")).unwrap().text, "two");
        assert_eq!(backend.remaining_rules(), 0);
        assert!(matches!(
            backend.complete(&request("p")),
            Err(LlmError::Unmatched { .. })
        ));
    }

    #[test]
    fn exact_hash_rule_ignores_whitespace_differences() {
        let backend = ScriptedBackend::new(vec![ReplayRule {
            key: ReplayKey::ExactHash(prompt_hash("Hello   World")),
            response: "hi".into(),
            probability: Some(0.5),
            max_uses: None,
        }]);
        let r = backend.complete(&request("hello world")).unwrap();
        assert_eq!(r.text, "hi");
        assert_eq!(r.probability, Some(0.5));
    }

    #[test]
    fn record_then_replay_yields_identical_responses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.json");
        let source: Arc<dyn LlmBackend> = Arc::new(ScriptedBackend::sequence(["a", "b", "c"]));
        let recorder = RecordingBackend::new(source, &path);
        let prompts = ["first prompt", "second prompt", "first prompt"];
        let recorded: Vec<String> = prompts
            .iter()
            .map(|p| recorder.complete(&request(p)).unwrap().text)
            .collect();

        let replay = ScriptedBackend::from_file(&path).unwrap();
        let replayed: Vec<String> = prompts
            .iter()
            .map(|p| replay.complete(&request(p)).unwrap().text)
            .collect();
        assert_eq!(recorded, replayed);
    }

    #[test]
    fn gateway_rejects_oversize_prompts_before_calling_backend() {
        let backend = Arc::new(ScriptedBackend::sequence(["x"]));
        let gateway = LlmGateway::with_settings(
            backend.clone(),
            GatewaySettings {
                context_limit_tokens: 10,
                ..GatewaySettings::default()
            },
        );
        let err = gateway.complete(&"word ".repeat(20)).unwrap_err();
        assert_eq!(
            err,
            LlmError::Oversize {
                estimated: 25,
                limit: 10
            }
        );
        assert_eq!(backend.call_count(), 0);
        assert_eq!(gateway.complete("short").unwrap().text, "x");
    }

    #[test]
    fn replay_file_round_trips_through_json() {
        let file = ReplayFile {
            description: None,
            rules: vec![
                ReplayRule::patterns(["a"], "r").once(),
                ReplayRule {
                    key: ReplayKey::ExactHash("ab12".into()),
                    response: "s".into(),
                    probability: None,
                    max_uses: None,
                },
            ],
        };
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains(r#""key":{"patterns":["a"]}"#));
        assert!(json.contains(r#""key":{"exact_hash":"ab12"}"#));
        assert_eq!(serde_json::from_str::<ReplayFile>(&json).unwrap(), file);
    }
}
