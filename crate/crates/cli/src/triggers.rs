use anyhow::anyhow;
use clap::{Args, Subcommand};
use sage_client::{Client, ClientError};
use sage_core::monitoring::TriggerRegistration;

use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct TriggersArgs {
    /// Base URL of a running service.
    #[arg(long, default_value = "http://127.0.0.1:8080", env = "SAGE_SERVER")]
    server: String,
    #[command(subcommand)]
    action: TriggerAction,
}

#[derive(Debug, Subcommand)]
enum TriggerAction {
    /// List registrations with their conditions.
    List {
        #[arg(long)]
        json: bool,
    },
    Enable { id: String },
    Disable { id: String },
    Delete { id: String },
}

fn client_error(e: ClientError) -> CliError {
    CliError::runtime(anyhow!(e))
}

pub fn render(triggers: &[TriggerRegistration], sources: &dyn Fn(&str) -> Option<String>) -> String {
    if triggers.is_empty() {
        return "no triggers\n".into();
    }
    let mut out = format!("{:<12} {:<8} {:>5}  {:<20} {}\n", "ID", "ENABLED", "FIRES", "CONDITION", "ACTION");
    for t in triggers {
        out.push_str(&format!(
            "{:<12} {:<8} {:>5}  {:<20} {}\n",
            t.trigger_id,
            if t.enabled { "yes" } else { "no" },
            t.fire_count,
            t.condition_name,
            t.action_command
        ));
        if let Some(src) = sources(&t.condition_name) {
            out.push_str(&format!("{:<12} {}\n", "", src));
        }
    }
    out
}

pub async fn run(args: TriggersArgs) -> CliResult {
    let client = Client::new(&args.server);
    match args.action {
        TriggerAction::List { json } => {
            let triggers = client.triggers().await.map_err(client_error)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&triggers).map_err(CliError::runtime)?);
                return Ok(());
            }
            let conditions = client.conditions().await.map_err(client_error)?;
            let lookup = |name: &str| conditions.iter().find(|c| c.name == name).map(|c| c.source.clone());
            print!("{}", render(&triggers, &lookup));
        }
        TriggerAction::Enable { id } => {
            let t = client.set_trigger_enabled(&id, true).await.map_err(client_error)?;
            println!("{} enabled", t.trigger_id);
        }
        TriggerAction::Disable { id } => {
            let t = client.set_trigger_enabled(&id, false).await.map_err(client_error)?;
            println!("{} disabled", t.trigger_id);
        }
        TriggerAction::Delete { id } => {
            let t = client.delete_trigger(&id).await.map_err(client_error)?;
            println!("{} deleted", t.trigger_id);
        }
    }
    Ok(())
}
