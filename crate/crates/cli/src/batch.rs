//! Dimensionality sweeps: scripted agent against simulated humans, driven
//! through the same service API a browser would use.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use horizon_core::catalog::{CatalogError, TaskCatalog};
use horizon_core::domain::{IssueId, OptionIndex, Outcome};
use horizon_core::store::{decode_log, FsLogStore, LogStore, MemoryLogStore};
use horizon_core::{AgentKind, Condition};
use horizon_service::protocol::{CreateSessionRequest, PostOfferRequest};
use horizon_service::{AgentFactory, Envelope, Event, Service, ServiceConfig, ServiceError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{HumanPolicy, SimulatedHuman};

#[derive(Debug, Error)]
pub enum BatchError {
    #[error("invalid batch configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("session {session}: {source}")]
    Session {
        session: String,
        #[source]
        source: ServiceError,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

/// Everything a batch run needs. The TOML config file uses the same field
/// names; command-line flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BatchConfig {
    pub catalog: Option<PathBuf>,
    pub dimensionalities: Vec<usize>,
    pub repetitions: u32,
    /// Repetition `r` runs with seed `seed + r`.
    pub seed: u64,
    pub agent: AgentKind,
    pub policies: Vec<HumanPolicy>,
    pub condition: Condition,
    pub out_dir: Option<PathBuf>,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            catalog: None,
            dimensionalities: vec![1, 3, 5, 7],
            repetitions: 20,
            seed: 1,
            agent: AgentKind::Scripted,
            policies: HumanPolicy::ALL.to_vec(),
            condition: Condition::DecisionSupport,
            out_dir: None,
        }
    }
}

impl BatchConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, BatchError> {
        toml::from_str(text).map_err(|e| BatchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BatchError> {
        let text = fs::read_to_string(path).map_err(|e| BatchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    fn validate(&self) -> Result<(), BatchError> {
        if self.dimensionalities.is_empty() {
            return Err(BatchError::Config("no dimensionalities given".into()));
        }
        if self.policies.is_empty() {
            return Err(BatchError::Config("no human policies given".into()));
        }
        Ok(())
    }
}

/// One session's outcome; the CSV columns follow field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub session_id: String,
    pub dimensionality: usize,
    pub policy: HumanPolicy,
    pub seed: u64,
    pub condition: Condition,
    pub outcome: String,
    pub total_turns: u32,
    pub total_human_payoff_pct: Option<f64>,
    pub joint_payoff: Option<f64>,
    pub pareto_proximity: Option<f64>,
    pub chat_duration_s: f64,
    pub avg_first_keystroke_s: Option<f64>,
    pub backtracking_count: u32,
    pub concession_count: u32,
    pub avg_concession: f64,
    pub sequence_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: HumanPolicy,
    pub dimensionality: usize,
    pub sessions: usize,
    pub agreements: usize,
    pub mean_total_turns: f64,
    pub mean_human_payoff_pct: Option<f64>,
    pub mean_joint_payoff: Option<f64>,
    pub mean_pareto_proximity: Option<f64>,
    pub mean_sequence_entropy: f64,
    pub mean_chat_duration_s: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BatchOutput {
    pub rows: Vec<MetricsRow>,
    pub summary: Vec<SummaryRow>,
    /// Every serialized response and envelope, in session order.
    pub traffic: Vec<String>,
    /// Stored session logs by id.
    pub logs: BTreeMap<String, String>,
}

struct Job {
    dimensionality: usize,
    policy: HumanPolicy,
    seed: u64,
}

impl Job {
    fn session_id(&self) -> String {
        format!("n{}-{}-s{}", self.dimensionality, self.policy, self.seed)
    }
}

struct JobResult {
    traffic: Vec<String>,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("wire types serialize")
}

fn run_job(service: &Service, job: &Job, condition: Condition, agent: AgentKind) -> Result<JobResult, BatchError> {
    let id = job.session_id();
    let fail = |source| BatchError::Session {
        session: id.clone(),
        source,
    };
    let created = service
        .create_session_with_id(
            id.clone(),
            CreateSessionRequest {
                dimensionality: job.dimensionality,
                condition,
                agent,
                seed: Some(job.seed),
                caps: None,
            },
        )
        .map_err(fail)?;
    let mut traffic = vec![to_json(&created.session)];
    let task = created.session.issues.clone();
    let mut human = SimulatedHuman::new(job.policy, job.seed ^ ((job.dimensionality as u64) << 32));
    let mut standing: Option<BTreeMap<IssueId, OptionIndex>> = None;
    let mut now = 0;
    let mut turn = 1;
    loop {
        let selections = human.offer(&task, turn, standing.as_ref());
        let timing = human.timing(now, task.len());
        now = timing.submitted_at;
        let envelopes = service
            .post_offer(
                &id,
                &created.token,
                PostOfferRequest {
                    selections: Some(selections),
                    message: None,
                    timing,
                },
            )
            .map_err(fail)?;
        let mut ended = false;
        for env in &envelopes {
            match &env.event {
                Event::TurnResult(t) => standing = t.agent_offer.as_ref().map(|o| o.selections.clone()),
                Event::SessionEnded(_) => ended = true,
                _ => {}
            }
        }
        if ended {
            break;
        }
        turn += 1;
    }
    let all: Vec<Envelope> = service.events_since(&id, &created.token, 0).map_err(fail)?;
    traffic.extend(all.iter().map(to_json));
    Ok(JobResult { traffic })
}

fn outcome_label(outcome: &Option<Outcome>) -> String {
    match outcome {
        Some(Outcome::Agreement { .. }) => "agreement",
        Some(Outcome::Timeout) => "timeout",
        Some(Outcome::Aborted { .. }) => "aborted",
        None => "open",
    }
    .to_owned()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(HumanPolicy, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows {
        groups.entry((row.policy, row.dimensionality)).or_default().push(row);
    }
    groups
        .into_iter()
        .map(|((policy, dimensionality), rows)| SummaryRow {
            policy,
            dimensionality,
            sessions: rows.len(),
            agreements: rows.iter().filter(|r| r.outcome == "agreement").count(),
            mean_total_turns: mean(rows.iter().map(|r| r.total_turns as f64)).unwrap_or(0.0),
            mean_human_payoff_pct: mean(rows.iter().filter_map(|r| r.total_human_payoff_pct)),
            mean_joint_payoff: mean(rows.iter().filter_map(|r| r.joint_payoff)),
            mean_pareto_proximity: mean(rows.iter().filter_map(|r| r.pareto_proximity)),
            mean_sequence_entropy: mean(rows.iter().map(|r| r.sequence_entropy)).unwrap_or(0.0),
            mean_chat_duration_s: mean(rows.iter().map(|r| r.chat_duration_s)).unwrap_or(0.0),
        })
        .collect()
}

/// Runs every (policy, n, repetition) session; results are sorted by
/// dimensionality, policy and seed whatever order sessions finish in.
pub fn run_batch(config: &BatchConfig) -> Result<BatchOutput, BatchError> {
    let catalog = match &config.catalog {
        Some(path) => TaskCatalog::load(path)?,
        None => TaskCatalog::shipped(),
    };
    run_batch_with(config, catalog, horizon_service::scripted_only())
}

/// As [`run_batch`], with an explicit catalog and agent factory. The
/// config's `catalog` path is ignored.
pub fn run_batch_with(
    config: &BatchConfig,
    catalog: TaskCatalog,
    agents: AgentFactory,
) -> Result<BatchOutput, BatchError> {
    config.validate()?;
    let store = Arc::new(MemoryLogStore::new());
    let service = Service::new(ServiceConfig {
        catalog,
        store: Some(store.clone() as Arc<dyn LogStore>),
        agents,
    });

    let mut jobs = Vec::new();
    for &dimensionality in &config.dimensionalities {
        for &policy in &config.policies {
            for rep in 0..config.repetitions {
                jobs.push(Job {
                    dimensionality,
                    policy,
                    seed: config.seed.wrapping_add(rep as u64),
                });
            }
        }
    }
    jobs.sort_by_key(|j| (j.dimensionality, j.policy, j.seed));
    jobs.dedup_by_key(|j| (j.dimensionality, j.policy, j.seed));

    let results: Vec<JobResult> = jobs
        .par_iter()
        .map(|job| run_job(&service, job, config.condition, config.agent))
        .collect::<Result<_, _>>()?;

    let logs = store.snapshot();
    let mut rows = Vec::with_capacity(jobs.len());
    let mut traffic = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        let id = job.session_id();
        let text = logs
            .get(&id)
            .ok_or_else(|| BatchError::Config(format!("session {id} left no log")))?;
        let stored = decode_log(text).map_err(|e| BatchError::Config(format!("session {id}: {e}")))?;
        let footer = stored
            .footer
            .ok_or_else(|| BatchError::Config(format!("session {id} log has no footer")))?;
        let m = footer.metrics;
        rows.push(MetricsRow {
            session_id: id,
            dimensionality: job.dimensionality,
            policy: job.policy,
            seed: job.seed,
            condition: config.condition,
            outcome: outcome_label(&footer.outcome),
            total_turns: m.total_turns,
            total_human_payoff_pct: m.total_human_payoff_pct,
            joint_payoff: m.joint_payoff,
            pareto_proximity: m.pareto_proximity,
            chat_duration_s: m.chat_duration_s,
            avg_first_keystroke_s: m.avg_first_keystroke_s,
            backtracking_count: m.backtracking_count,
            concession_count: m.concessions.count,
            avg_concession: m.concessions.avg_magnitude,
            sequence_entropy: m.sequence_entropy,
        });
        traffic.extend(result.traffic);
    }
    let summary = summarize(&rows);
    Ok(BatchOutput {
        rows,
        summary,
        traffic,
        logs,
    })
}

/// Policies whose mean turn count drops somewhere as n grows, as
/// `(policy, smaller n, larger n)`.
pub fn turn_count_regressions(summary: &[SummaryRow]) -> Vec<(HumanPolicy, usize, usize)> {
    let mut by_policy: BTreeMap<HumanPolicy, Vec<&SummaryRow>> = BTreeMap::new();
    for row in summary {
        by_policy.entry(row.policy).or_default().push(row);
    }
    let mut out = Vec::new();
    for (policy, mut rows) in by_policy {
        rows.sort_by_key(|r| r.dimensionality);
        for w in rows.windows(2) {
            if w[1].mean_total_turns < w[0].mean_total_turns {
                out.push((policy, w[0].dimensionality, w[1].dimensionality));
            }
        }
    }
    out
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), BatchError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    writer.write_record(header)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush().map_err(|source| BatchError::Output {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

pub const METRICS_COLUMNS: [&str; 16] = [
    "session_id",
    "dimensionality",
    "policy",
    "seed",
    "condition",
    "outcome",
    "total_turns",
    "total_human_payoff_pct",
    "joint_payoff",
    "pareto_proximity",
    "chat_duration_s",
    "avg_first_keystroke_s",
    "backtracking_count",
    "concession_count",
    "avg_concession",
    "sequence_entropy",
];

pub const SUMMARY_COLUMNS: [&str; 10] = [
    "policy",
    "dimensionality",
    "sessions",
    "agreements",
    "mean_total_turns",
    "mean_human_payoff_pct",
    "mean_joint_payoff",
    "mean_pareto_proximity",
    "mean_sequence_entropy",
    "mean_chat_duration_s",
];

/// Writes `metrics.csv`, `summary.csv`, `traffic.jsonl` and
/// `logs/<session>/session.jsonl` under `dir`.
pub fn write_outputs(output: &BatchOutput, dir: &Path) -> Result<(), BatchError> {
    let io_err = |path: &Path| {
        let path = path.display().to_string();
        move |source| BatchError::Output { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("metrics.csv"), &output.rows, &METRICS_COLUMNS)?;
    write_csv(&dir.join("summary.csv"), &output.summary, &SUMMARY_COLUMNS)?;
    let traffic_path = dir.join("traffic.jsonl");
    let mut traffic = output.traffic.join("\n");
    if !traffic.is_empty() {
        traffic.push('\n');
    }
    fs::write(&traffic_path, traffic).map_err(io_err(&traffic_path))?;
    let logs_dir = dir.join("logs");
    let store = FsLogStore::new(&logs_dir);
    for (id, text) in &output.logs {
        let path = store.path_for(id);
        if path.exists() {
            fs::remove_file(&path).map_err(io_err(&path))?;
        }
        store.persist(id, text).map_err(io_err(&path))?;
    }
    Ok(())
}
