//! Turn-loop state machine.
//!
//! A turn is one human offer followed by one agent counter-offer. Every
//! accepted action updates the beliefs; every agent counter-offer produces a
//! snapshot (posterior, intensity grid, convergence panel). Beliefs are
//! maintained in both interface conditions; the condition only decides
//! whether snapshots are surfaced.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentContext, AgentKind, Negotiator};
use crate::belief::{
    concession_rate, init_beliefs, intensity_grid, BeliefError, BeliefState, EvidenceEvent, IntensityGrid, ModelParams,
    VisualParams,
};
use crate::convergence::ConvergenceSnapshot;
use crate::domain::{
    issue_violations, Caps, IssueId, Offer, Outcome, Role, SessionLog, TaskIssue, Timing, Turn, MAX_DIMENSIONALITY,
};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::store::{encode_session, LogStore, PersistOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    AwaitingHuman,
    AwaitingAgent,
    Agreed,
    TimedOut,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Agreed | Phase::TimedOut | Phase::Aborted)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::AwaitingHuman => "awaiting_human",
            Phase::AwaitingAgent => "awaiting_agent",
            Phase::Agreed => "agreed",
            Phase::TimedOut => "timed_out",
            Phase::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Baseline,
    DecisionSupport,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::Baseline => "baseline",
            Condition::DecisionSupport => "decision_support",
        })
    }
}

impl FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Condition::Baseline),
            "decision_support" => Ok(Condition::DecisionSupport),
            other => Err(format!("unknown condition {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub condition: Condition,
    pub caps: Caps,
    pub agent: AgentKind,
    pub seed: u64,
    pub model: ModelParams,
    pub visual: VisualParams,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>, condition: Condition, agent: AgentKind, seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            condition,
            caps: Caps::default(),
            agent,
            seed,
            model: ModelParams::default(),
            visual: VisualParams::default(),
        }
    }
}

/// Decision-support state after one completed turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSnapshot {
    pub turn_number: u32,
    pub beliefs: BeliefState,
    pub grid: IntensityGrid,
    pub convergence: ConvergenceSnapshot,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("action not allowed in phase {actual}")]
    PhaseViolation { actual: Phase },
    #[error("invalid offer: {}", .0.join("; "))]
    InvalidOffer(Vec<String>),
    #[error("invalid timing: {0}")]
    InvalidTiming(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error("failed to persist session log after {attempts} attempts: {source}")]
    Storage {
        attempts: u32,
        #[source]
        source: std::io::Error,
    },
}

const STORE_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct Session {
    config: SessionConfig,
    phase: Phase,
    round: u32,
    elapsed_ms: u64,
    beliefs: BeliefState,
    log: SessionLog,
    snapshots: Vec<TurnSnapshot>,
    warnings: Vec<String>,
    report: Option<MetricsReport>,
    persisted: bool,
}

impl Session {
    pub fn new(config: SessionConfig, task: Vec<TaskIssue>) -> Result<Self, SessionError> {
        if !(1..=MAX_DIMENSIONALITY).contains(&task.len()) {
            return Err(SessionError::InvalidTask(format!(
                "{} issues, expected 1..={MAX_DIMENSIONALITY}",
                task.len()
            )));
        }
        for issue in &task {
            if let Some(v) = issue_violations(issue, issue.id().as_str()).first() {
                return Err(SessionError::InvalidTask(v.to_string()));
            }
        }
        let beliefs = init_beliefs(task.iter().map(|t| t.id().clone()));
        let log = SessionLog {
            session_id: config.session_id.clone(),
            dimensionality: task.len(),
            task,
            turns: Vec::new(),
            outcome: None,
            caps: config.caps,
        };
        Ok(Self {
            config,
            phase: Phase::AwaitingHuman,
            round: 0,
            elapsed_ms: 0,
            beliefs,
            log,
            snapshots: Vec::new(),
            warnings: Vec::new(),
            report: None,
            persisted: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Completed turns.
    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.elapsed_ms
    }

    pub fn beliefs(&self) -> &BeliefState {
        &self.beliefs
    }

    pub fn log(&self) -> &SessionLog {
        &self.log
    }

    pub fn task(&self) -> &[TaskIssue] {
        &self.log.task
    }

    pub fn snapshots(&self) -> &[TurnSnapshot] {
        &self.snapshots
    }

    /// Latest snapshot, or `None` in the baseline condition.
    pub fn visible_snapshot(&self) -> Option<&TurnSnapshot> {
        match self.config.condition {
            Condition::DecisionSupport => self.snapshots.last(),
            Condition::Baseline => None,
        }
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// The agent's counter-offer still on the table, if any.
    pub fn standing_agent_offer(&self) -> Option<&Offer> {
        self.log.turns.last().and_then(|t| t.agent_offer.as_ref())
    }

    fn expect(&self, phase: Phase) -> Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(SessionError::PhaseViolation { actual: self.phase })
        }
    }

    fn close(&mut self, outcome: Outcome, phase: Phase) {
        self.log.outcome = Some(outcome);
        self.phase = phase;
    }

    fn issue_ids(&self) -> Vec<IssueId> {
        self.log.issue_ids()
    }

    /// Accepts the human's offer for the next turn. Rejected offers leave the
    /// session untouched; exceeding a cap ends it as timed out.
    pub fn submit_human_offer(&mut self, offer: Offer, timing: Timing) -> Result<Phase, SessionError> {
        self.expect(Phase::AwaitingHuman)?;
        let mut problems: Vec<String> = offer
            .violations(&self.issue_ids())
            .into_iter()
            .map(|(f, r)| format!("{f}: {r}"))
            .collect();
        if offer.proposer != Role::Human {
            problems.push("proposer: must be the human".into());
        }
        if !problems.is_empty() {
            return Err(SessionError::InvalidOffer(problems));
        }
        if !timing.is_monotone() {
            return Err(SessionError::InvalidTiming(
                "received_at <= first_keystroke_at <= submitted_at violated".into(),
            ));
        }
        if timing.received_at < self.elapsed_ms {
            return Err(SessionError::InvalidTiming(format!(
                "turn received at {} ms, before the previous submission at {} ms",
                timing.received_at, self.elapsed_ms
            )));
        }

        if self.round >= self.config.caps.round_cap || timing.submitted_at > self.config.caps.time_cap_ms {
            self.close(Outcome::Timeout, Phase::TimedOut);
            return Ok(self.phase);
        }

        let turn_number = self.round + 1;
        let standing = self.standing_agent_offer().cloned();
        self.log.turns.push(Turn {
            turn_number,
            human_offer: offer.clone(),
            agent_offer: None,
            timing,
        });
        self.elapsed_ms = timing.submitted_at;
        self.apply_human_evidence(&offer, turn_number)?;

        match standing {
            Some(agent) if agent.same_selections(&offer) => {
                self.round += 1;
                self.close(
                    Outcome::Agreement {
                        selections: offer.selections,
                    },
                    Phase::Agreed,
                );
            }
            _ => self.phase = Phase::AwaitingAgent,
        }
        Ok(self.phase)
    }

    fn apply_human_evidence(&mut self, offer: &Offer, turn_number: u32) -> Result<(), SessionError> {
        let params = self.config.model;
        for issue in &self.log.task {
            let Some(proposed) = offer.selection(issue.id()) else {
                continue;
            };
            let own: Vec<f64> = self
                .log
                .turns
                .iter()
                .filter_map(|t| t.human_offer.selection(issue.id()))
                .map(|o| issue.payoffs.human_payoffs[o.get()])
                .collect();
            let range = issue.payoffs.max_payoff(Role::Human) - issue.payoffs.min_payoff(Role::Human);
            let event = EvidenceEvent {
                issue_id: issue.id().clone(),
                proposer: Role::Human,
                proposed,
                turn_number,
                r_concession: concession_rate(&own, range),
            };
            let trace = self.beliefs.apply(&event, &params)?;
            if trace.degenerate() {
                self.warnings.push(format!(
                    "turn {turn_number}: degenerate human evidence on {}, beliefs reset",
                    issue.id()
                ));
            }
        }
        Ok(())
    }

    /// Obtains the agent's counter-offer for the pending turn and refreshes
    /// the beliefs and widgets. Agent failures abort the session.
    pub fn advance_agent(&mut self, agent: &mut dyn Negotiator) -> Result<Phase, SessionError> {
        self.expect(Phase::AwaitingAgent)?;
        let (current, previous) = self.log.turns.split_last().expect("pending turn exists");
        let ctx = AgentContext {
            turn: current.turn_number,
            task: &self.log.task,
            last_human_offer: &current.human_offer,
            transcript: previous,
        };
        let counter = match agent.counter_offer(&ctx) {
            Ok(offer) => offer,
            Err(e) => {
                let reason = format!("agent failure: {e}");
                self.close(Outcome::Aborted { reason }, Phase::Aborted);
                return Ok(self.phase);
            }
        };
        let problems = counter.violations(&self.issue_ids());
        if !problems.is_empty() || counter.proposer != Role::Agent {
            let mut detail: Vec<String> = problems.into_iter().map(|(f, r)| format!("{f}: {r}")).collect();
            if counter.proposer != Role::Agent {
                detail.push("proposer: must be the agent".into());
            }
            let reason = format!("agent produced an invalid offer: {}", detail.join("; "));
            self.close(Outcome::Aborted { reason }, Phase::Aborted);
            return Ok(self.phase);
        }

        let turn_number = current.turn_number;
        let human = current.human_offer.clone();
        self.log.turns.last_mut().expect("pending turn").agent_offer = Some(counter.clone());

        let params = self.config.model;
        for issue in &self.log.task {
            let event = EvidenceEvent {
                issue_id: issue.id().clone(),
                proposer: Role::Agent,
                proposed: counter.selection(issue.id()).expect("validated"),
                turn_number,
                r_concession: 0.0,
            };
            let trace = self.beliefs.apply(&event, &params)?;
            if trace.degenerate() {
                self.warnings.push(format!(
                    "turn {turn_number}: degenerate agent evidence on {}, beliefs reset",
                    issue.id()
                ));
            }
        }
        let snapshot = self.compute_snapshot(turn_number)?;
        self.snapshots.push(snapshot);
        self.round += 1;

        if counter.same_selections(&human) {
            self.close(
                Outcome::Agreement {
                    selections: counter.selections,
                },
                Phase::Agreed,
            );
        } else {
            self.phase = Phase::AwaitingHuman;
        }
        Ok(self.phase)
    }

    fn compute_snapshot(&self, turn_number: u32) -> Result<TurnSnapshot, SessionError> {
        let grid = intensity_grid(&self.beliefs, &self.log.task, &self.config.visual)?;
        let convergence = ConvergenceSnapshot::compute(&grid, &self.log.task);
        Ok(TurnSnapshot {
            turn_number,
            beliefs: self.beliefs.clone(),
            grid,
            convergence,
        })
    }

    /// Ends a live session as timed out (wall-clock expiry, replay of a
    /// stored timeout).
    pub fn time_out(&mut self) -> Result<Phase, SessionError> {
        if self.phase.is_terminal() {
            return Err(SessionError::PhaseViolation { actual: self.phase });
        }
        if self.phase == Phase::AwaitingAgent {
            // The pending human offer never got its counter.
            self.round += 1;
        }
        self.close(Outcome::Timeout, Phase::TimedOut);
        Ok(self.phase)
    }

    /// Ends the session as timed out once `now_ms` passes the time cap.
    pub fn expire(&mut self, now_ms: u64) -> bool {
        if !self.phase.is_terminal() && now_ms > self.config.caps.time_cap_ms {
            self.close(Outcome::Timeout, Phase::TimedOut);
            return true;
        }
        false
    }

    pub fn abort(&mut self, reason: impl Into<String>) -> Result<Phase, SessionError> {
        if self.phase.is_terminal() {
            return Err(SessionError::PhaseViolation { actual: self.phase });
        }
        self.close(Outcome::Aborted { reason: reason.into() }, Phase::Aborted);
        Ok(self.phase)
    }

    /// Computes the metrics of a finished session and persists its log.
    /// Repeated calls return the same report and store a single copy. On a
    /// storage failure the in-memory log is kept and the call may be retried.
    pub fn finalize(&mut self, store: Option<&dyn LogStore>) -> Result<MetricsReport, SessionError> {
        if !self.phase.is_terminal() {
            return Err(SessionError::PhaseViolation { actual: self.phase });
        }
        let report = self.report.get_or_insert_with(|| compute_metrics(&self.log)).clone();
        if let Some(store) = store {
            if !self.persisted {
                let contents = encode_session(self, &report);
                let mut attempt = 0;
                loop {
                    attempt += 1;
                    match store.persist(&self.config.session_id, &contents) {
                        Ok(PersistOutcome::Written | PersistOutcome::Unchanged) => break,
                        Err(source) if attempt >= STORE_ATTEMPTS => {
                            return Err(SessionError::Storage {
                                attempts: attempt,
                                source,
                            })
                        }
                        Err(_) => continue,
                    }
                }
                self.persisted = true;
            }
        }
        Ok(report)
    }

    pub fn report(&self) -> Option<&MetricsReport> {
        self.report.as_ref()
    }
}

/// Re-runs a stored log through a fresh session. With a deterministic agent
/// the result reproduces the original log, snapshots and metrics.
pub fn replay(log: &SessionLog, config: SessionConfig, agent: &mut dyn Negotiator) -> Result<Session, SessionError> {
    let mut session = Session::new(config, log.task.clone())?;
    for turn in &log.turns {
        session.submit_human_offer(turn.human_offer.clone(), turn.timing)?;
        if session.phase() == Phase::AwaitingAgent && turn.agent_offer.is_some() {
            session.advance_agent(agent)?;
        }
    }
    if !session.phase().is_terminal() {
        match &log.outcome {
            Some(Outcome::Timeout) => {
                session.time_out()?;
            }
            Some(Outcome::Aborted { reason }) => {
                session.abort(reason.clone())?;
            }
            _ => {}
        }
    }
    Ok(session)
}
