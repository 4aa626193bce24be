mod bench;
mod chat;
mod triggers;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sage_server::ServerConfig;
use tracing_subscriber::EnvFilter;

/// Failure classes mapped to the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments, configuration or input files: exit 1.
    Config(anyhow::Error),
    /// Anything that fails after startup: exit 2.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config(e: impl Into<anyhow::Error>) -> Self {
        CliError::Config(e.into())
    }

    pub fn runtime(e: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(e.into())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sage", version, about = "Smart-home LLM agent: service, console chat and benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured bind address.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
    /// Interactive console session.
    Chat(chat::ChatArgs),
    /// Benchmark suites and failure annotation.
    #[command(subcommand)]
    Bench(bench::BenchCommand),
    /// Inspect and edit trigger registrations on a running service.
    Triggers(triggers::TriggersArgs),
}

fn init_tracing() {
    let filter = EnvFilter::try_from_env("SAGE_LOG").unwrap_or_else(|_| EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

async fn serve(config: PathBuf, bind: Option<std::net::SocketAddr>) -> CliResult {
    let mut config = ServerConfig::load(&config).map_err(CliError::config)?;
    if let Some(b) = bind {
        config.bind = b;
    }
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    sage_server::serve(config, shutdown).await.map_err(|e| match e {
        sage_server::ServeError::Config(_) | sage_server::ServeError::Llm(_) | sage_server::ServeError::Build(_) => {
            CliError::config(e)
        }
        other => CliError::runtime(other),
    })
}

async fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Serve { config, bind } => serve(config, bind).await,
        Command::Chat(args) => chat::run(args).await,
        Command::Bench(cmd) => bench::run(cmd).await,
        Command::Triggers(args) => triggers::run(args).await,
    }
}

/// The error and its causes, skipping causes the message already quotes.
fn describe(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let c = cause.to_string();
        if !msg.contains(&c) {
            msg.push_str(": ");
            msg.push_str(&c);
        }
    }
    msg
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_tracing();
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let (CliError::Config(err) | CliError::Runtime(err)) = e;
            eprintln!("error: {}", describe(&err));
            ExitCode::from(code)
        }
    }
}
