use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Subcommand};
use sage_bench::{
    AnnotationStore, FailureAnnotation, FailureColumn, FailureTable, FailureType, LlmSource, Method, RunnerOptions,
    SuiteReport, DEFAULT_RUNS,
};
use sage_core::llm::LlmSpec;

use crate::{CliError, CliResult};

#[derive(Debug, Subcommand)]
pub enum BenchCommand {
    /// Run a suite and write `report.json`.
    Run(RunArgs),
    /// Print the table of a saved report, plus failure types when annotated.
    Report {
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Record the failure type of a case that failed every run.
    Annotate {
        #[arg(long, default_value = "report.json")]
        report: PathBuf,
        #[arg(long, default_value = "annotations.json")]
        annotations: PathBuf,
        #[arg(long = "case")]
        case_id: String,
        /// One of the failure-type names, e.g. ToolSelection.
        #[arg(long = "type")]
        failure_type: String,
        #[arg(long, default_value = "")]
        note: String,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Suite directory with `tasks/` and `replays/`.
    #[arg(long)]
    suite: PathBuf,
    /// Home fixture directory.
    #[arg(long, default_value = "fixtures/home")]
    home: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: u32,
    /// `scripted` (suite replays), `scripted:<dir>` or `live`.
    #[arg(long, default_value = "scripted")]
    llm: String,
    #[arg(long, default_value = "sage")]
    method: Method,
    /// Live judge for `llm_judge` answer checks.
    #[arg(long)]
    judge: Option<String>,
    #[arg(long)]
    parallel: bool,
    #[arg(long)]
    trace_dir: Option<PathBuf>,
    /// Output file for the JSON report.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

fn llm_source(spec: &str) -> CliResult<LlmSource> {
    if spec == "scripted" {
        return Ok(LlmSource::Scripted(None));
    }
    if let Some(dir) = spec.strip_prefix("scripted:") {
        let dir = PathBuf::from(dir);
        if !dir.is_dir() {
            return Err(CliError::config(anyhow!("replay directory {} does not exist", dir.display())));
        }
        return Ok(LlmSource::Scripted(Some(dir)));
    }
    let spec: LlmSpec = spec.parse().map_err(|e: String| CliError::config(anyhow!(e)))?;
    let gateway = spec.gateway().map_err(CliError::config)?;
    Ok(LlmSource::Gateway(gateway))
}

fn read_report(path: &Path) -> CliResult<SuiteReport> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read report {}", path.display()))
        .map_err(CliError::config)?;
    serde_json::from_str(&text)
        .with_context(|| format!("invalid report {}", path.display()))
        .map_err(CliError::config)
}

fn parse_failure_type(name: &str) -> CliResult<FailureType> {
    serde_json::from_value(serde_json::Value::String(name.to_string())).map_err(|_| {
        let names: Vec<String> = FailureType::ALL
            .iter()
            .map(|t| serde_json::to_value(t).unwrap().as_str().unwrap_or_default().to_string())
            .collect();
        CliError::config(anyhow!("unknown failure type '{name}'; expected one of {}", names.join(", ")))
    })
}

pub fn render_report(report: &SuiteReport, annotations: Option<&[FailureAnnotation]>) -> String {
    let mut out = report.render_table();
    if let Some(anns) = annotations {
        let column = FailureColumn::new(report.method.as_str(), report, anns);
        let _ = writeln!(out);
        out.push_str(&FailureTable::new(vec![column]).render());
    }
    out
}

async fn run_suite(args: RunArgs) -> CliResult {
    if !args.suite.is_dir() {
        return Err(CliError::config(anyhow!("suite directory {} does not exist", args.suite.display())));
    }
    if !args.home.is_dir() {
        return Err(CliError::config(anyhow!("home fixtures {} do not exist", args.home.display())));
    }
    if args.runs == 0 {
        return Err(CliError::config(anyhow!("--runs must be at least 1")));
    }
    let llm = llm_source(&args.llm)?;
    let judge = match &args.judge {
        Some(s) => {
            let spec: LlmSpec = s.parse().map_err(|e: String| CliError::config(anyhow!(e)))?;
            Some(spec.gateway().map_err(CliError::config)?)
        }
        None => None,
    };
    let options = RunnerOptions {
        runs: args.runs,
        method: args.method,
        judge,
        trace_dir: args.trace_dir.clone(),
        parallel: args.parallel,
    };
    let (home, suite) = (args.home.clone(), args.suite.clone());
    let report = tokio::task::spawn_blocking(move || sage_bench::run_suite_dir(home, suite, llm, options))
        .await
        .map_err(CliError::runtime)?
        .map_err(CliError::runtime)?;
    let json = serde_json::to_string_pretty(&report).map_err(CliError::runtime)?;
    std::fs::write(&args.out, json)
        .with_context(|| format!("cannot write {}", args.out.display()))
        .map_err(CliError::runtime)?;
    print!("{}", report.render_table());
    Ok(())
}

pub async fn run(cmd: BenchCommand) -> CliResult {
    match cmd {
        BenchCommand::Run(args) => run_suite(args).await,
        BenchCommand::Report { report, annotations } => {
            let report = read_report(&report)?;
            let store = match annotations {
                Some(p) => Some(AnnotationStore::open(&p).map_err(CliError::config)?),
                None => None,
            };
            print!("{}", render_report(&report, store.as_ref().map(|s| s.annotations())));
            Ok(())
        }
        BenchCommand::Annotate {
            report,
            annotations,
            case_id,
            failure_type,
            note,
        } => {
            let report = read_report(&report)?;
            let failure_type = parse_failure_type(&failure_type)?;
            let mut store = AnnotationStore::open(&annotations).map_err(CliError::config)?;
            let ann = FailureAnnotation::new(&case_id, failure_type, note);
            let tier = ann.tier;
            store.annotate(&report, ann).map_err(CliError::config)?;
            println!(
                "annotated {case_id}: {} (tier {}), {} annotation(s) in {}",
                failure_type.label(),
                tier.label(),
                store.annotations().len(),
                annotations.display()
            );
            Ok(())
        }
    }
}
