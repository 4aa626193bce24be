use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use sage_core::agent::CallOutcome;
use sage_core::events::{drain, EventType};
use sage_core::hub::AttrPath;
use sage_core::llm::{LlmGateway, ScriptedBackend};
use sage_core::personalization::{HumanMode, ScriptedAnswers};
use sage_core::sage::{Sage, SageOptions, SessionError, SessionRequest};
use serde_json::json;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn load(replay: &str) -> (Sage, Arc<ScriptedBackend>) {
    let backend = Arc::new(ScriptedBackend::from_file(fixtures().join("replays").join(replay)).unwrap());
    let sage = Sage::load(
        fixtures().join("home"),
        Arc::new(LlmGateway::new(backend.clone())),
        SageOptions {
            seed_memories: true,
            ..SageOptions::default()
        },
    )
    .unwrap();
    (sage, backend)
}

fn unwrap_session(
    r: Result<sage_core::sage::SessionResult, SessionError>,
    backend: &ScriptedBackend,
) -> sage_core::sage::SessionResult {
    match r {
        Ok(r) => r,
        Err(e) => {
            for (i, p) in backend.prompts().iter().enumerate() {
                eprintln!("--- prompt {i} ---\n{p}");
            }
            panic!("session failed: {e}");
        }
    }
}

fn attr(sage: &Sage, path: &str) -> serde_json::Value {
    sage.hub().read(&path.parse::<AttrPath>().unwrap()).unwrap()
}

#[test]
fn put_on_the_game_by_the_dresser() {
    let (sage, backend) = load("dresser-tv.json");
    let started = Instant::now();
    let req = SessionRequest::new("alice", "Put on the game by the dresser")
        .with_session_id("dresser")
        .with_human(HumanMode::Scripted(ScriptedAnswers::new(["the Raptors"])));
    let result = unwrap_session(sage.run_session(req), &backend);
    assert!(started.elapsed().as_secs() < 5);

    let calls: Vec<String> = result.trace.tool_calls().into_iter().map(|(_, t)| t).collect();
    assert_eq!(
        calls,
        [
            "personalization",
            "human interaction",
            "TV schedule search",
            "device interaction",
            "device interaction planner",
            "device disambiguation",
            "device command execution",
            "device command execution",
        ]
    );
    let depths: Vec<usize> = result.trace.tool_calls().into_iter().map(|(d, _)| d).collect();
    assert_eq!(depths, [1, 1, 1, 1, 2, 2, 2, 2]);
    assert_eq!(attr(&sage, "tv-1/main/switch/switch"), json!("on"));
    assert_eq!(attr(&sage, "tv-1/main/tvChannel/tvChannel"), json!("7"));
    assert_eq!(attr(&sage, "tv-2/main/switch/switch"), json!("off"));
    assert!(result.answer.contains("channel 7"));
    assert_eq!(backend.remaining_rules(), 0);

    // Q/A pair and the utterance itself were remembered.
    let texts: Vec<String> = sage.memory().entries_for("alice").into_iter().map(|e| e.text).collect();
    assert!(texts.iter().any(|t| t == "Question: What is your favorite sports team? Answer: the Raptors"));
    assert_eq!(texts.last().unwrap(), "Put on the game by the dresser");
}

#[test]
fn dresser_run_is_deterministic_modulo_timestamps() {
    let run = || {
        let (sage, backend) = load("dresser-tv.json");
        let req = SessionRequest::new("alice", "Put on the game by the dresser")
            .with_session_id("same")
            .with_human(HumanMode::Scripted(ScriptedAnswers::new(["the Raptors"])));
        let r = unwrap_session(sage.run_session(req), &backend);
        serde_json::to_string(&r.trace.without_timestamps()).unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn turn_on_the_fancy_light() {
    let (sage, backend) = load("fancy-light.json");
    let r = unwrap_session(sage.run_session(SessionRequest::new("alice", "Turn on the fancy light")), &backend);
    assert_eq!(attr(&sage, "light-1/main/switch/switch"), json!("on"));
    assert!(r.answer.to_lowercase().contains("fancy light"));
    assert_eq!(
        r.trace.tool_calls_of("device interaction"),
        ["device disambiguation", "device command execution"]
    );
}

#[test]
fn lights_on_when_the_tv_turns_off() {
    let (sage, backend) = load("lights-when-tv-off.json");
    let mut rx = sage.events().subscribe();
    sage.hub()
        .mutate(&"tv-2/main/switch/switch".parse().unwrap(), json!("on"))
        .unwrap();
    let r = unwrap_session(
        sage.run_session(SessionRequest::new("alice", "turn the lights on when the TV is off")),
        &backend,
    );
    assert_eq!(
        r.trace.tool_calls_of("SAGE"),
        ["condition code writing", "condition polling"]
    );
    assert_eq!(sage.monitor().condition("is_tv_off").unwrap().source, "device(tv-2, main, switch, switch) == \"off\"");
    let triggers = sage.monitor().triggers();
    assert_eq!(triggers.len(), 1);
    assert_eq!(triggers[0].action_command, "turn the lights on");

    // TV still on: no fire.
    assert!(sage.poll_tick().sessions.is_empty());
    sage.hub()
        .mutate(&"tv-2/main/switch/switch".parse().unwrap(), json!("off"))
        .unwrap();
    let outcome = sage.poll_tick();
    assert_eq!(outcome.sessions.len(), 1);
    let fired = outcome.sessions.into_iter().next().unwrap();
    unwrap_session(fired.result, &backend);
    assert_eq!(attr(&sage, "light-1/main/switch/switch"), json!("on"));
    assert_eq!(attr(&sage, "light-4/main/switch/switch"), json!("on"));

    for _ in 0..100 {
        assert!(sage.poll_tick().sessions.is_empty());
    }
    assert_eq!(sage.monitor().triggers()[0].fire_count, 1);

    // The fire event precedes the spawned session's tool events.
    let events = drain(&mut rx);
    let fire = events.iter().position(|e| e.kind == EventType::TriggerFired).unwrap();
    let last_user_done = events
        .iter()
        .position(|e| e.kind == EventType::SessionDone)
        .unwrap();
    assert!(last_user_done < fire);
    assert!(events[fire..].iter().any(|e| e.kind == EventType::ToolInvoked));
    assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));
}

#[test]
fn empty_input_is_rejected_before_any_llm_call() {
    let (sage, backend) = load("fancy-light.json");
    assert!(matches!(
        sage.run_session(SessionRequest::new("alice", "   ")),
        Err(SessionError::EmptyInput)
    ));
    assert_eq!(backend.call_count(), 0);
}

#[test]
fn unmatched_replay_aborts_with_a_partial_trace() {
    let backend = Arc::new(ScriptedBackend::new(vec![]));
    let sage = Sage::load(
        fixtures().join("home"),
        Arc::new(LlmGateway::new(backend)),
        SageOptions::default(),
    )
    .unwrap();
    let Err(SessionError::Aborted { trace, .. }) = sage.run_session(SessionRequest::new("u", "hello")) else {
        panic!("expected abort");
    };
    assert!(matches!(trace.calls[0].outcome, Some(CallOutcome::Aborted { .. })));
}

#[test]
fn bundled_roster_and_index() {
    let (sage, _) = load("fancy-light.json");
    let summaries = sage.hub().list_devices();
    assert_eq!(summaries.len(), 8);
    let count = |prefix: &str| summaries.iter().filter(|d| d.device_id.starts_with(prefix)).count();
    assert_eq!((count("tv-"), count("fridge-"), count("dishwasher-"), count("light-")), (2, 1, 1, 4));
    let text = serde_json::to_string(&summaries).unwrap();
    assert!(!text.contains("\"commands\""));
}

#[test]
fn reset_restores_state_memory_and_triggers() {
    let (sage, backend) = load("lights-when-tv-off.json");
    let before = sage.hub().snapshot();
    let memories = sage.memory().len();
    unwrap_session(
        sage.run_session(SessionRequest::new("alice", "turn the lights on when the TV is off")),
        &backend,
    );
    sage.hub()
        .mutate(&"tv-2/main/switch/switch".parse().unwrap(), json!("on"))
        .unwrap();
    sage.reset().unwrap();
    assert_eq!(sage.hub().snapshot(), before);
    assert_eq!(sage.memory().len(), memories);
    assert!(sage.monitor().triggers().is_empty());
    assert!(sage.monitor().conditions().is_empty());
}
