//! Wire types. Every payload is JSON; option choices travel as 1-based
//! labels.

use std::collections::BTreeMap;

use horizon_core::belief::{BeliefState, CellTier, IntensityGrid, ZopaRange};
use horizon_core::domain::{
    Caps, IssueId, Offer, OptionIndex, Outcome, TaskIssue, Timing, CANONICAL_DIMENSIONALITIES, OPTIONS_PER_ISSUE,
};
use horizon_core::metrics::MetricsReport;
use horizon_core::{AgentKind, Condition, ConvergenceSnapshot, Phase, TurnSnapshot};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;
/// Request and response header carrying [`PROTOCOL_VERSION`].
pub const PROTOCOL_HEADER: &str = "x-horizon-protocol";
pub const TOKEN_HEADER: &str = "x-session-token";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub dimensionality: usize,
    pub condition: Condition,
    #[serde(default = "default_agent")]
    pub agent: AgentKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub caps: Option<Caps>,
}

fn default_agent() -> AgentKind {
    AgentKind::Scripted
}

/// The human's view of one issue. The agent's column is never included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanIssueView {
    pub issue_id: IssueId,
    pub name: String,
    pub option_labels: Vec<String>,
    pub human_payoffs: [f64; OPTIONS_PER_ISSUE],
    pub tau_min: f64,
    pub tau_max: f64,
}

impl From<&TaskIssue> for HumanIssueView {
    fn from(issue: &TaskIssue) -> Self {
        Self {
            issue_id: issue.id().clone(),
            name: issue.spec.name.clone(),
            option_labels: issue.spec.option_labels.clone(),
            human_payoffs: issue.payoffs.human_payoffs,
            tau_min: issue.spec.tau_min,
            tau_max: issue.spec.tau_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionDescriptor {
    pub protocol_version: u32,
    pub session_id: String,
    pub condition: Condition,
    pub agent: AgentKind,
    pub seed: u64,
    pub dimensionality: usize,
    /// False for dimensionalities outside the canonical sweep.
    pub canonical: bool,
    pub caps: Caps,
    pub issues: Vec<HumanIssueView>,
}

impl SessionDescriptor {
    pub fn is_canonical(n: usize) -> bool {
        CANONICAL_DIMENSIONALITIES.contains(&n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session: SessionDescriptor,
    /// Required on every later request for this session.
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session: SessionDescriptor,
    pub phase: Phase,
    pub round: u32,
    pub last_seq: u64,
}

/// A human offer, either as explicit selections or as a chat message with
/// an embedded offer block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PostOfferRequest {
    #[serde(default)]
    pub selections: Option<BTreeMap<IssueId, OptionIndex>>,
    #[serde(default)]
    pub message: Option<String>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeBatch {
    pub envelopes: Vec<Envelope>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub protocol_version: u32,
    pub session_id: String,
    /// Strictly increasing per session, starting at 1.
    pub seq: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Event {
    SessionCreated(SessionDescriptor),
    TurnResult(TurnResult),
    BeliefSnapshot(BeliefSnapshotView),
    ConvergenceSnapshot(ConvergenceView),
    SessionEnded(SessionEnded),
    Error(ErrorBody),
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::SessionCreated(_) => "session_created",
            Event::TurnResult(_) => "turn_result",
            Event::BeliefSnapshot(_) => "belief_snapshot",
            Event::ConvergenceSnapshot(_) => "convergence_snapshot",
            Event::SessionEnded(_) => "session_ended",
            Event::Error(_) => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub turn_number: u32,
    pub human_offer: Offer,
    #[serde(default)]
    pub agent_offer: Option<Offer>,
    /// The counter-offer as a chat message with an offer block.
    #[serde(default)]
    pub agent_message: Option<String>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueBeliefView {
    pub issue_id: IssueId,
    pub pmf: [f64; OPTIONS_PER_ISSUE],
    pub zopa: Option<ZopaRange>,
    pub boundary_confidence: f64,
    pub s_consistency: f64,
    pub intensities: [f64; OPTIONS_PER_ISSUE],
    pub tiers: [CellTier; OPTIONS_PER_ISSUE],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefSnapshotView {
    pub turn_number: u32,
    pub issues: Vec<IssueBeliefView>,
}

impl BeliefSnapshotView {
    pub fn new(turn_number: u32, beliefs: &BeliefState, grid: &IntensityGrid) -> Self {
        let issues = grid
            .rows
            .iter()
            .filter_map(|row| {
                let belief = beliefs.issue(&row.issue_id)?;
                Some(IssueBeliefView {
                    issue_id: row.issue_id.clone(),
                    pmf: belief.pmf,
                    zopa: row.zopa,
                    boundary_confidence: belief.boundary_confidence,
                    s_consistency: belief.consistency.s_consistency,
                    intensities: row.intensities,
                    tiers: row.tiers,
                })
            })
            .collect();
        Self { turn_number, issues }
    }
}

impl From<&TurnSnapshot> for BeliefSnapshotView {
    fn from(s: &TurnSnapshot) -> Self {
        Self::new(s.turn_number, &s.beliefs, &s.grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceView {
    pub turn_number: u32,
    #[serde(flatten)]
    pub snapshot: ConvergenceSnapshot,
}

/// Metrics the human is allowed to see: everything derived from their own
/// payoffs and behaviour. Joint payoff and Pareto proximity depend on the
/// agent's column and stay in the stored log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanMetrics {
    pub total_human_payoff_pct: Option<f64>,
    pub total_turns: u32,
    pub chat_duration_s: f64,
    pub avg_first_keystroke_s: Option<f64>,
    pub backtracking_count: u32,
    pub concession_count: u32,
    pub avg_concession: f64,
    pub sequence_entropy: f64,
}

impl From<&MetricsReport> for HumanMetrics {
    fn from(m: &MetricsReport) -> Self {
        Self {
            total_human_payoff_pct: m.total_human_payoff_pct,
            total_turns: m.total_turns,
            chat_duration_s: m.chat_duration_s,
            avg_first_keystroke_s: m.avg_first_keystroke_s,
            backtracking_count: m.backtracking_count,
            concession_count: m.concessions.count,
            avg_concession: m.concessions.avg_magnitude,
            sequence_entropy: m.sequence_entropy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEnded {
    pub phase: Phase,
    pub outcome: Outcome,
    pub metrics: HumanMetrics,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    /// Stable machine-readable code.
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}
