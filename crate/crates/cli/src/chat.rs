use std::io::{IsTerminal, Write};
use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args;
use futures::StreamExt;
use sage_client::{Client, StreamItem};
use sage_core::api::{ChatRequest, SessionStatus};
use sage_core::events::{EventEnvelope, EventType};
use sage_core::llm::LlmSpec;
use sage_server::{AppState, ServerConfig};
use tokio::sync::mpsc;

use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ChatArgs {
    /// Talk to a running service instead of starting one in-process.
    #[arg(long, conflicts_with_all = ["config", "fixtures", "llm", "replay"])]
    server: Option<String>,
    /// Service config for the in-process service.
    #[arg(long, conflicts_with_all = ["fixtures", "llm", "replay"])]
    config: Option<PathBuf>,
    /// Home fixture directory for the in-process service.
    #[arg(long, default_value = "fixtures/home")]
    fixtures: PathBuf,
    /// `scripted:<file>`, `record:<file>` or `live`.
    #[arg(long, conflicts_with = "replay")]
    llm: Option<String>,
    /// Shorthand for `--llm scripted:<file>`.
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long, default_value = "alice")]
    user: String,
}

/// Lines from stdin, read on a plain thread.
fn stdin_lines() -> mpsc::UnboundedReceiver<String> {
    let (tx, rx) = mpsc::unbounded_channel();
    std::thread::spawn(move || {
        for line in std::io::stdin().lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    rx
}

struct Console {
    lines: mpsc::UnboundedReceiver<String>,
    echo: bool,
}

impl Console {
    async fn prompt(&mut self, label: &str) -> Option<String> {
        print!("{label}> ");
        let _ = std::io::stdout().flush();
        let line = self.lines.recv().await;
        match &line {
            Some(l) if self.echo => println!("{l}"),
            None => println!(),
            _ => {}
        }
        line
    }
}

async fn embedded(args: &ChatArgs) -> CliResult<(Client, AppState)> {
    let mut config = match &args.config {
        Some(path) => ServerConfig::load(path).map_err(CliError::config)?,
        None => {
            let llm: LlmSpec = match (&args.replay, &args.llm) {
                (Some(r), _) => LlmSpec::Scripted { replay: r.clone() },
                (None, Some(s)) => s.parse().map_err(|e: String| CliError::config(anyhow!(e)))?,
                (None, None) => {
                    return Err(CliError::config(anyhow!(
                        "pass --server, --config, --replay or --llm to choose an LLM backend"
                    )))
                }
            };
            let config = ServerConfig::new(&args.fixtures, llm);
            config
                .validate()
                .map_err(|m| CliError::config(anyhow!(m)))?;
            config
        }
    };
    config.bind = SocketAddr::from(([127, 0, 0, 1], 0));
    let state = AppState::new(config).map_err(CliError::config)?;
    let (addr, serve) = sage_server::bind(&state, state.config.bind)
        .await
        .map_err(CliError::runtime)?;
    tokio::spawn(serve);
    state.spawn_poller();
    Ok((Client::new(format!("http://{addr}")), state))
}

/// Prints one session's progress until it finishes.
async fn follow(
    client: &Client,
    events: &mut futures::stream::BoxStream<'static, sage_client::Result<StreamItem>>,
    console: &mut Console,
    session_id: &str,
) -> anyhow::Result<bool> {
    let mine = |e: &EventEnvelope| e.payload["session_id"].as_str() == Some(session_id);
    loop {
        let item = match events.next().await {
            Some(item) => item?,
            None => return Err(anyhow!("event stream closed")),
        };
        let env = match item {
            StreamItem::Event(e) if mine(&e) => e,
            StreamItem::Event(_) => continue,
            StreamItem::Gap { missed } => {
                println!("({missed} events missed)");
                if client.session(session_id).await?.status.is_finished() {
                    break;
                }
                continue;
            }
        };
        match env.kind {
            EventType::ToolInvoked => {
                let depth = env.payload["depth"].as_u64().unwrap_or(1) as usize;
                println!(
                    "{}-> {}: {}",
                    "  ".repeat(depth),
                    env.payload["tool"].as_str().unwrap_or("?"),
                    env.payload["input"].as_str().unwrap_or("")
                );
            }
            EventType::QuestionPending => {
                println!("sage asks: {}", env.payload["question"].as_str().unwrap_or(""));
                let Some(answer) = console.prompt("answer").await else {
                    return Ok(false);
                };
                client.answer(session_id, &answer).await?;
            }
            EventType::SessionDone => break,
            _ => {}
        }
    }
    // The done event can arrive before the record is updated.
    let record = client.wait_finished(session_id, std::time::Duration::from_secs(30)).await?;
    match record.status {
        SessionStatus::Done => println!("sage: {}", record.answer.unwrap_or_default()),
        _ => println!("error: {}", record.error.unwrap_or_else(|| "session failed".into())),
    }
    Ok(true)
}

pub async fn run(args: ChatArgs) -> CliResult {
    let (client, _state) = match &args.server {
        Some(url) => (Client::new(url), None),
        None => {
            let (c, s) = embedded(&args).await?;
            (c, Some(s))
        }
    };
    client
        .health()
        .await
        .with_context(|| format!("service at {} is not reachable", client.base_url()))
        .map_err(CliError::runtime)?;
    let mut events = client.events().await.map_err(CliError::runtime)?;
    let mut console = Console {
        lines: stdin_lines(),
        echo: !std::io::stdin().is_terminal(),
    };
    let mut turn = 0;
    while let Some(line) = console.prompt("you").await {
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if matches!(text, "exit" | "quit") {
            break;
        }
        turn += 1;
        let session_id = format!("chat-{}-{turn}", uuid::Uuid::new_v4().simple());
        let req = ChatRequest {
            user_id: args.user.clone(),
            text: text.to_string(),
            session_id: Some(session_id.clone()),
        };
        client.chat(&req).await.map_err(CliError::runtime)?;
        if !follow(&client, &mut events, &mut console, &session_id)
            .await
            .map_err(CliError::runtime)?
        {
            break;
        }
    }
    Ok(())
}
