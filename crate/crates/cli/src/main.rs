use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use horizon_cli::batch::{self, BatchConfig};
use horizon_cli::HumanPolicy;
use horizon_core::catalog::{pareto_report, validate_anti_triviality, TaskCatalog};
use horizon_core::conformance::conformance_appendix_a;
use horizon_core::metrics::compute_metrics;
use horizon_core::store::{decode_log, FsLogStore, LogStore};
use horizon_core::{AgentKind, Condition};
use horizon_service::{Service, ServiceConfig};

#[derive(Parser)]
#[command(name = "horizon", version, about = "Multi-issue negotiation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run simulated humans against the agent over several task sizes.
    Batch(BatchArgs),
    /// Check the belief engine against the golden scenario.
    Conformance,
    /// Serve the HTTP and WebSocket API.
    Serve(ServeArgs),
    /// Validate a payoff catalog and print its joint-payoff report.
    Catalog {
        /// TOML catalog; the shipped one when omitted.
        path: Option<PathBuf>,
    },
    /// Recompute metrics for a stored session log.
    Metrics { log: PathBuf },
}

#[derive(Args)]
struct BatchArgs {
    /// TOML file with batch settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Comma-separated task sizes.
    #[arg(long, value_delimiter = ',')]
    dimensionalities: Option<Vec<usize>>,
    #[arg(long)]
    repetitions: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<HumanPolicy>>,
    #[arg(long)]
    condition: Option<Condition>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Directory for finished session logs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
    /// TOML file with the LLM client settings; enables the llm agent.
    #[cfg(feature = "llm")]
    #[arg(long)]
    llm_config: Option<PathBuf>,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Batch(args) => run_batch(args),
        Command::Conformance => conformance(),
        Command::Serve(args) => serve(args),
        Command::Catalog { path } => catalog(path),
        Command::Metrics { log } => metrics(log),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

fn run_batch(args: BatchArgs) -> CmdResult {
    let mut config = match &args.config {
        Some(path) => BatchConfig::load(path)?,
        None => BatchConfig::default(),
    };
    if args.catalog.is_some() {
        config.catalog = args.catalog;
    }
    if let Some(v) = args.dimensionalities {
        config.dimensionalities = v;
    }
    if let Some(v) = args.repetitions {
        config.repetitions = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.agent {
        config.agent = v;
    }
    if let Some(v) = args.policies {
        config.policies = v;
    }
    if let Some(v) = args.condition {
        config.condition = v;
    }
    if args.out_dir.is_some() {
        config.out_dir = args.out_dir;
    }
    let out_dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("batch-out"));

    let started = std::time::Instant::now();
    let output = batch::run_batch(&config)?;
    batch::write_outputs(&output, &out_dir)?;
    tracing::info!(
        sessions = output.rows.len(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        out = %out_dir.display(),
        "batch finished"
    );
    for row in &output.summary {
        println!(
            "{:<20} n={:<2} sessions={:<3} agreements={:<3} mean_turns={:.2}",
            row.policy, row.dimensionality, row.sessions, row.agreements, row.mean_total_turns
        );
    }
    for (policy, a, b) in batch::turn_count_regressions(&output.summary) {
        eprintln!("warning: {policy} needs fewer turns at n={b} than at n={a}");
    }
    Ok(ExitCode::SUCCESS)
}

fn conformance() -> CmdResult {
    let report = conformance_appendix_a();
    println!("{report}");
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn load_catalog(path: Option<&PathBuf>) -> Result<TaskCatalog, Box<dyn std::error::Error>> {
    Ok(match path {
        Some(p) => TaskCatalog::load(p)?,
        None => TaskCatalog::shipped(),
    })
}

fn catalog(path: Option<PathBuf>) -> CmdResult {
    let catalog = load_catalog(path.as_ref())?;
    for issue in catalog.issues() {
        let report = pareto_report(&issue.payoffs);
        let joint: Vec<String> = report.joint_payoffs.iter().map(|v| format!("{v}")).collect();
        println!(
            "{:<24} joint=[{}] optimum={} ({})",
            issue.id().to_string(),
            joint.join(", "),
            report.joint_optimum_index,
            report.joint_optimum_value
        );
    }
    let violations = validate_anti_triviality(&catalog);
    for v in &violations {
        println!("violation: {v}");
    }
    Ok(if violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn metrics(log: PathBuf) -> CmdResult {
    let stored = decode_log(&std::fs::read_to_string(&log)?)?;
    let report = compute_metrics(&stored.to_log());
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn serve(args: ServeArgs) -> CmdResult {
    let mut config = ServiceConfig {
        catalog: load_catalog(args.catalog.as_ref())?,
        ..ServiceConfig::default()
    };
    if let Some(dir) = &args.log_dir {
        config.store = Some(Arc::new(FsLogStore::new(dir)) as Arc<dyn LogStore>);
    }
    #[cfg(feature = "llm")]
    if let Some(path) = &args.llm_config {
        config.agents = llm_agents(path)?;
    }
    let app = horizon_service::router(Service::new(config));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(args.addr).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        axum::serve(listener, app).await
    })?;
    Ok(ExitCode::SUCCESS)
}

#[cfg(feature = "llm")]
fn llm_agents(path: &std::path::Path) -> Result<horizon_service::AgentFactory, Box<dyn std::error::Error>> {
    use horizon_core::agents::llm::{HttpTransport, LlmClientConfig, LlmNegotiator};
    use horizon_core::{Negotiator, ScriptedAgent};

    let llm: LlmClientConfig = toml::from_str(&std::fs::read_to_string(path)?)?;
    Ok(Arc::new(move |kind, seed| match kind {
        AgentKind::Scripted => Some(Box::new(ScriptedAgent::new(seed)) as Box<dyn Negotiator>),
        AgentKind::Llm => match HttpTransport::from_config(&llm) {
            Ok(transport) => Some(Box::new(LlmNegotiator::new(llm.clone(), transport)) as Box<dyn Negotiator>),
            Err(e) => {
                tracing::error!(error = %e, "llm transport unavailable");
                None
            }
        },
    }))
}
