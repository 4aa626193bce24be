//! The assembled agent: hub, memory, monitor and the tool hierarchy loaded
//! from a fixture directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use crate::agent::{
    AgentAbort, AgentSession, RegistryConfig, RegistryError, SessionSettings, Tool, ToolRegistry, Trace,
};
use crate::embedding::{Embedder, HashingEmbedder};
use crate::events::{EventBus, EventType};
use crate::fixtures::{read_json, FixtureError};
use crate::hub::{DeviceHub, DeviceState};
use crate::llm::LlmGateway;
use crate::monitoring::{CodeExecuteTool, ConditionPollingTool, FiredTrigger, Monitor, TickReport};
use crate::personalization::{
    HumanChannel, HumanInteractionTool, HumanMode, MemorySeed, MemorySeedFile, MemoryStore, PersonalizationTool,
    UserProfiler,
};
use crate::tools::{
    AttributeTool, CommandTool, DeviceImageIndex, DisambiguationTool, DocsTool, PlannerTool, TvSchedule,
    TvScheduleTool, WeatherData, WeatherTool,
};

/// Tool names as they appear in `tools.json`.
pub mod names {
    pub const SAGE: &str = "SAGE";
    pub const PERSONALIZATION: &str = "personalization";
    pub const HUMAN_INTERACTION: &str = "human interaction";
    pub const DEVICE_INTERACTION: &str = "device interaction";
    pub const PLANNER: &str = "device interaction planner";
    pub const DOCS: &str = "API documentation retrieval";
    pub const ATTRIBUTE: &str = "device attribute retrieval";
    pub const COMMAND: &str = "device command execution";
    pub const DISAMBIGUATION: &str = "device disambiguation";
    pub const CONDITION_CODE_WRITING: &str = "condition code writing";
    pub const CODE_EXECUTION: &str = "code execution";
    pub const CONDITION_POLLING: &str = "condition polling";
    pub const WEATHER: &str = "weather";
    pub const TV_SCHEDULE: &str = "TV schedule search";
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error("tools.json: {0}")]
    Registry(#[from] RegistryError),
}

#[derive(Clone, Default)]
pub struct SageOptions {
    /// Directory for `triggers.json` and `profiles.json`. Without it nothing
    /// is persisted.
    pub state_dir: Option<PathBuf>,
    /// Load `memories.json` from the fixture directory, if present.
    pub seed_memories: bool,
    pub embedder: Option<Arc<dyn Embedder>>,
    pub events: Option<EventBus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionOrigin {
    User,
    Trigger { trigger_id: String },
}

#[derive(Debug, Clone)]
pub struct SessionRequest {
    pub session_id: Option<String>,
    pub user_id: String,
    pub input: String,
    pub human: HumanMode,
    pub origin: SessionOrigin,
}

impl SessionRequest {
    pub fn new(user_id: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            session_id: None,
            user_id: user_id.into(),
            input: input.into(),
            human: HumanMode::Disabled,
            origin: SessionOrigin::User,
        }
    }

    pub fn with_session_id(mut self, id: impl Into<String>) -> Self {
        self.session_id = Some(id.into());
        self
    }

    pub fn with_human(mut self, human: HumanMode) -> Self {
        self.human = human;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionResult {
    pub session_id: String,
    pub answer: String,
    pub trace: Trace,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("input must not be empty")]
    EmptyInput,
    #[error("{abort}")]
    Aborted {
        session_id: String,
        abort: AgentAbort,
        trace: Box<Trace>,
    },
}

impl SessionError {
    pub fn trace(&self) -> Option<&Trace> {
        match self {
            SessionError::Aborted { trace, .. } => Some(trace),
            SessionError::EmptyInput => None,
        }
    }
}

/// Session spawned by a trigger during a poll.
#[derive(Debug)]
pub struct FiredSession {
    pub trigger: FiredTrigger,
    pub result: Result<SessionResult, SessionError>,
}

#[derive(Debug)]
pub struct PollOutcome {
    pub report: TickReport,
    pub sessions: Vec<FiredSession>,
}

pub struct Sage {
    hub: Arc<DeviceHub>,
    memory: Arc<MemoryStore>,
    profiler: Arc<UserProfiler>,
    monitor: Arc<Monitor>,
    human: Arc<HumanChannel>,
    events: EventBus,
    registry: ToolRegistry,
    llm: RwLock<Arc<LlmGateway>>,
    base_state: DeviceState,
    seed: Vec<MemorySeed>,
}

impl std::fmt::Debug for Sage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sage")
            .field("hub", &self.hub)
            .field("memory", &self.memory)
            .field("monitor", &self.monitor)
            .finish()
    }
}

fn optional<T: serde::de::DeserializeOwned + Default>(path: &Path) -> Result<T, FixtureError> {
    if path.exists() {
        read_json(path)
    } else {
        Ok(T::default())
    }
}

impl Sage {
    /// Loads `tools.json`, the hub fixtures, `image_index.json`,
    /// `tv_schedule.json`, `weather.json` and optionally `memories.json`
    /// from `dir`.
    pub fn load(dir: impl AsRef<Path>, llm: Arc<LlmGateway>, options: SageOptions) -> Result<Self, BuildError> {
        let dir = dir.as_ref();
        let events = options.events.clone().unwrap_or_default();
        let config = RegistryConfig::load(dir.join("tools.json"))?;

        let hub = Arc::new(DeviceHub::load_dir(dir)?);
        {
            let bus = events.clone();
            hub.subscribe(move |change| {
                bus.publish(
                    EventType::DeviceStateChanged,
                    json!({
                        "device_id": change.path.device_id,
                        "path": change.path,
                        "old": change.old,
                        "new": change.new,
                        "cause": change.cause,
                    }),
                );
            });
        }
        let base_state = hub.snapshot();

        let embedder = options
            .embedder
            .clone()
            .unwrap_or_else(|| Arc::new(HashingEmbedder::default()));
        let index_path = dir.join("image_index.json");
        let index = if index_path.exists() {
            DeviceImageIndex::load(&index_path, embedder.as_ref())?
        } else {
            DeviceImageIndex::default()
        };
        index.check_covers(&hub)?;

        let memory = Arc::new(MemoryStore::new(embedder.clone()));
        let seed = if options.seed_memories {
            optional::<MemorySeedFile>(&dir.join("memories.json"))?.memories
        } else {
            Vec::new()
        };
        memory
            .seed(&seed)
            .map_err(|e| FixtureError::Invalid(format!("memories.json: {e}")))?;

        let (profiler, monitor) = match &options.state_dir {
            Some(state) => {
                std::fs::create_dir_all(state).map_err(|e| FixtureError::io(state, e))?;
                (
                    UserProfiler::with_cache_file(state.join("profiles.json"))?,
                    Monitor::with_store(state.join("triggers.json"), Some(events.clone()))?,
                )
            }
            None => (UserProfiler::new(), Monitor::new(Some(events.clone()))),
        };
        let profiler = Arc::new(profiler);
        let monitor = Arc::new(monitor);
        let human = Arc::new(HumanChannel::new(Some(events.clone())));

        let tv: TvSchedule = optional(&dir.join("tv_schedule.json"))?;
        let weather: WeatherData = optional(&dir.join("weather.json"))?;
        let prompt = |name: &str| config.prompts.get(name).cloned();

        let mut impls: HashMap<String, Arc<dyn Tool>> = HashMap::new();
        let mut add = |name: &str, tool: Arc<dyn Tool>| {
            impls.insert(name.to_string(), tool);
        };
        add(
            names::PERSONALIZATION,
            Arc::new(PersonalizationTool {
                template: prompt(names::PERSONALIZATION),
                ..PersonalizationTool::new(memory.clone(), profiler.clone())
            }),
        );
        add(names::HUMAN_INTERACTION, Arc::new(HumanInteractionTool { store: memory.clone() }));
        add(
            names::PLANNER,
            Arc::new(PlannerTool {
                hub: hub.clone(),
                template: prompt(names::PLANNER),
            }),
        );
        add(names::DOCS, Arc::new(DocsTool { hub: hub.clone() }));
        add(names::ATTRIBUTE, Arc::new(AttributeTool { hub: hub.clone() }));
        add(names::COMMAND, Arc::new(CommandTool { hub: hub.clone() }));
        add(
            names::DISAMBIGUATION,
            Arc::new(DisambiguationTool {
                hub: hub.clone(),
                index: Arc::new(index),
                embedder: embedder.clone(),
            }),
        );
        add(
            names::CODE_EXECUTION,
            Arc::new(CodeExecuteTool {
                hub: hub.clone(),
                monitor: monitor.clone(),
            }),
        );
        add(names::CONDITION_POLLING, Arc::new(ConditionPollingTool { monitor: monitor.clone() }));
        add(names::WEATHER, Arc::new(WeatherTool { data: weather }));
        add(names::TV_SCHEDULE, Arc::new(TvScheduleTool { schedule: tv }));

        let registry = ToolRegistry::new(&config, impls)?;
        info!(
            devices = hub.devices().len(),
            tools = registry.descriptors().count(),
            memories = memory.len(),
            "agent loaded"
        );
        Ok(Self {
            hub,
            memory,
            profiler,
            monitor,
            human,
            events,
            registry,
            llm: RwLock::new(llm),
            base_state,
            seed,
        })
    }

    pub fn hub(&self) -> &Arc<DeviceHub> {
        &self.hub
    }

    pub fn memory(&self) -> &Arc<MemoryStore> {
        &self.memory
    }

    pub fn profiler(&self) -> &Arc<UserProfiler> {
        &self.profiler
    }

    pub fn monitor(&self) -> &Arc<Monitor> {
        &self.monitor
    }

    pub fn human(&self) -> &Arc<HumanChannel> {
        &self.human
    }

    pub fn events(&self) -> &EventBus {
        &self.events
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn llm(&self) -> Arc<LlmGateway> {
        self.llm.read().clone()
    }

    /// Swaps the backend for subsequent sessions.
    pub fn set_llm(&self, llm: Arc<LlmGateway>) {
        *self.llm.write() = llm;
    }

    /// Device state right after loading.
    pub fn base_state(&self) -> &DeviceState {
        &self.base_state
    }

    /// Human mode bound to this agent's question channel.
    pub fn interactive(&self, timeout: std::time::Duration) -> HumanMode {
        HumanMode::Interactive {
            channel: self.human.clone(),
            timeout,
        }
    }

    /// Restores the loaded device state, reseeds memory and drops every
    /// trigger, condition and cached profile.
    pub fn reset(&self) -> Result<(), FixtureError> {
        self.hub
            .restore(self.base_state.clone())
            .map_err(|e| FixtureError::Invalid(e.message))?;
        self.memory.clear();
        self.memory
            .seed(&self.seed)
            .map_err(|e| FixtureError::Invalid(e.to_string()))?;
        self.monitor.reset();
        self.profiler.clear();
        Ok(())
    }

    /// One iteration of the outer loop: runs the entry agent on the input.
    /// User utterances are appended to long-term memory afterwards.
    pub fn run_session(&self, req: SessionRequest) -> Result<SessionResult, SessionError> {
        let input = req.input.trim();
        if input.is_empty() {
            return Err(SessionError::EmptyInput);
        }
        let session_id = req.session_id.clone().unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
        let llm = self.llm();
        let settings = SessionSettings {
            session_id: session_id.clone(),
            user_id: req.user_id.clone(),
            human: req.human.clone(),
        };
        self.events.publish(
            EventType::SessionStarted,
            json!({
                "session_id": session_id,
                "user_id": req.user_id,
                "input": input,
                "origin": req.origin,
            }),
        );
        let mut session = AgentSession::new(&self.registry, &llm, settings, input).with_events(&self.events);
        let outcome = session.run(input);
        let trace = session.trace();

        if req.origin == SessionOrigin::User {
            if let Err(e) = self.memory.add(&req.user_id, input) {
                warn!(error = %e, "could not store the utterance");
            }
        }

        let mut payload = json!({
            "session_id": session_id,
            "user_id": req.user_id,
            "origin": req.origin,
        });
        let result = match outcome {
            Ok(answer) => {
                payload["status"] = json!("done");
                payload["answer"] = json!(answer);
                Ok(SessionResult {
                    session_id,
                    answer,
                    trace,
                })
            }
            Err(abort) => {
                payload["status"] = json!("error");
                payload["error"] = json!(abort.to_string());
                payload["abort_kind"] = json!(abort.kind);
                Err(SessionError::Aborted {
                    session_id,
                    abort,
                    trace: Box::new(trace),
                })
            }
        };
        self.events.publish(EventType::SessionDone, payload);
        result
    }

    /// Evaluates every enabled trigger once without running any action.
    pub fn tick(&self) -> TickReport {
        self.monitor.poll_tick(self.hub.as_ref())
    }

    /// Runs the action of a fired trigger as a new entry-agent session.
    pub fn run_fired(&self, fired: &FiredTrigger, human: HumanMode) -> Result<SessionResult, SessionError> {
        self.run_session(SessionRequest {
            session_id: None,
            user_id: fired.user_id.clone(),
            input: fired.action_command.clone(),
            human,
            origin: SessionOrigin::Trigger {
                trigger_id: fired.trigger_id.clone(),
            },
        })
    }

    /// Polls once and runs each fired action to completion, in firing order.
    pub fn poll_tick(&self) -> PollOutcome {
        let report = self.tick();
        let sessions = report
            .fired
            .iter()
            .map(|t| FiredSession {
                trigger: t.clone(),
                result: self.run_fired(t, HumanMode::Disabled),
            })
            .collect();
        PollOutcome { report, sessions }
    }
}
