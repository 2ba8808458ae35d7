//! Shared negotiation vocabulary: issues, options, payoffs, offers, turns and
//! session logs.
//!
//! Option indices are 0-based in memory. Every serialized form carries the
//! 1-based option label instead, so the conversion happens in exactly one
//! place: the serde impls of [`OptionIndex`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Every issue offers exactly this many options.
pub const OPTIONS_PER_ISSUE: usize = 7;
/// Largest number of issues a single session may negotiate.
pub const MAX_DIMENSIONALITY: usize = 16;
/// Dimensionality levels of the stock experimental design.
pub const CANONICAL_DIMENSIONALITIES: [usize; 4] = [1, 3, 5, 7];
pub const DEFAULT_ROUND_CAP: u32 = 15;
pub const DEFAULT_TIME_CAP_MS: u64 = 900_000;

/// 0-based option index. Serializes as the 1-based option label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OptionIndex(u8);

impl OptionIndex {
    pub const MIDDLE: OptionIndex = OptionIndex(3);

    /// Checked constructor from a 0-based index.
    pub fn new(index: usize) -> Option<Self> {
        (index < OPTIONS_PER_ISSUE).then_some(Self(index as u8))
    }

    /// Builds an index without a range check. Out-of-range values survive
    /// until [`validate_session`] or an engine entry point rejects them.
    pub const fn new_unchecked(index: u8) -> Self {
        Self(index)
    }

    /// Checked constructor from a 1-based label.
    pub fn from_label(label: usize) -> Option<Self> {
        label.checked_sub(1).and_then(Self::new)
    }

    pub const fn get(self) -> usize {
        self.0 as usize
    }

    pub const fn label(self) -> usize {
        self.0 as usize + 1
    }

    pub const fn is_valid(self) -> bool {
        (self.0 as usize) < OPTIONS_PER_ISSUE
    }

    pub fn all() -> impl Iterator<Item = OptionIndex> + Clone {
        (0..OPTIONS_PER_ISSUE as u8).map(OptionIndex)
    }
}

impl fmt::Display for OptionIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "option {}", self.label())
    }
}

impl Serialize for OptionIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_u64(self.label() as u64)
    }
}

impl<'de> Deserialize<'de> for OptionIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let label = u64::deserialize(deserializer)?;
        if label == 0 || label > u8::MAX as u64 {
            return Err(serde::de::Error::custom(format!(
                "option label {label} is not a 1-based option label"
            )));
        }
        Ok(OptionIndex((label - 1) as u8))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IssueId(String);

impl IssueId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for IssueId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for IssueId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Human,
    Agent,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Human => "human",
            Role::Agent => "agent",
        })
    }
}

/// Static description of one issue together with the visual-mapping
/// parameters that depend on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueSpec {
    pub issue_id: IssueId,
    pub name: String,
    pub option_labels: Vec<String>,
    /// Issue scaling factor of the high-intensity tier.
    pub xi: f64,
    /// Lowest human payoff still considered acceptable to the human.
    pub tau_min: f64,
    pub tau_max: f64,
}

/// Private payoff columns for one issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub issue_id: IssueId,
    pub human_payoffs: [f64; OPTIONS_PER_ISSUE],
    pub agent_payoffs: [f64; OPTIONS_PER_ISSUE],
}

impl PayoffMatrix {
    pub fn payoff(&self, role: Role, option: OptionIndex) -> f64 {
        match role {
            Role::Human => self.human_payoffs[option.get()],
            Role::Agent => self.agent_payoffs[option.get()],
        }
    }

    pub fn column(&self, role: Role) -> &[f64; OPTIONS_PER_ISSUE] {
        match role {
            Role::Human => &self.human_payoffs,
            Role::Agent => &self.agent_payoffs,
        }
    }

    pub fn max_payoff(&self, role: Role) -> f64 {
        self.column(role).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_payoff(&self, role: Role) -> f64 {
        self.column(role).iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn joint(&self, option: OptionIndex) -> f64 {
        self.human_payoffs[option.get()] + self.agent_payoffs[option.get()]
    }
}

/// One negotiated issue: its public description and both payoff columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskIssue {
    pub spec: IssueSpec,
    pub payoffs: PayoffMatrix,
}

impl TaskIssue {
    pub fn id(&self) -> &IssueId {
        &self.spec.issue_id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Offer {
    pub proposer: Role,
    pub selections: BTreeMap<IssueId, OptionIndex>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Offer {
    pub fn new(proposer: Role, selections: BTreeMap<IssueId, OptionIndex>) -> Self {
        Self {
            proposer,
            selections,
            note: None,
        }
    }

    pub fn selection(&self, issue: &IssueId) -> Option<OptionIndex> {
        self.selections.get(issue).copied()
    }

    /// Same option on every issue, regardless of proposer and note.
    pub fn same_selections(&self, other: &Offer) -> bool {
        self.selections == other.selections
    }

    /// Problems with this offer against the active issue set, each as
    /// `(field, rule)`.
    pub fn violations(&self, issues: &[IssueId]) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let active: BTreeSet<&IssueId> = issues.iter().collect();
        for issue in issues {
            match self.selections.get(issue) {
                None => out.push((format!("selections.{issue}"), "missing selection".into())),
                Some(idx) if !idx.is_valid() => out.push((format!("selections.{issue}"), "index out of range".into())),
                Some(_) => {}
            }
        }
        for issue in self.selections.keys() {
            if !active.contains(issue) {
                out.push((format!("selections.{issue}"), "unknown issue".into()));
            }
        }
        out
    }
}

/// Per-turn human telemetry, integer milliseconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub received_at: u64,
    pub first_keystroke_at: u64,
    pub submitted_at: u64,
}

impl Timing {
    pub fn is_monotone(&self) -> bool {
        self.received_at <= self.first_keystroke_at && self.first_keystroke_at <= self.submitted_at
    }
}

/// A human proposal followed by the agent's counter-proposal. The counter is
/// absent only on a closing turn (agreement by the human, or abort).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_number: u32,
    pub human_offer: Offer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_offer: Option<Offer>,
    pub timing: Timing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Agreement { selections: BTreeMap<IssueId, OptionIndex> },
    Timeout,
    Aborted { reason: String },
}

impl Outcome {
    pub fn agreement(&self) -> Option<&BTreeMap<IssueId, OptionIndex>> {
        match self {
            Outcome::Agreement { selections } => Some(selections),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caps {
    pub round_cap: u32,
    pub time_cap_ms: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Self {
            round_cap: DEFAULT_ROUND_CAP,
            time_cap_ms: DEFAULT_TIME_CAP_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub session_id: String,
    pub task: Vec<TaskIssue>,
    pub dimensionality: usize,
    pub turns: Vec<Turn>,
    pub outcome: Option<Outcome>,
    pub caps: Caps,
}

impl SessionLog {
    pub fn issue_ids(&self) -> Vec<IssueId> {
        self.task.iter().map(|t| t.id().clone()).collect()
    }

    pub fn issue(&self, id: &IssueId) -> Option<&TaskIssue> {
        self.task.iter().find(|t| t.id() == id)
    }

    pub fn human_offers(&self) -> impl Iterator<Item = &Offer> {
        self.turns.iter().map(|t| &t.human_offer)
    }

    pub fn agent_offers(&self) -> impl Iterator<Item = &Offer> {
        self.turns.iter().filter_map(|t| t.agent_offer.as_ref())
    }

    pub fn offers_by(&self, role: Role) -> Vec<&Offer> {
        match role {
            Role::Human => self.human_offers().collect(),
            Role::Agent => self.agent_offers().collect(),
        }
    }
}

/// A broken invariant: which field, which rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Validates an issue specification and its payoff matrix.
pub fn issue_violations(issue: &TaskIssue, prefix: &str) -> Vec<Violation> {
    let mut out = Vec::new();
    let spec = &issue.spec;
    if spec.option_labels.len() != OPTIONS_PER_ISSUE {
        out.push(Violation::new(
            format!("{prefix}.option_labels"),
            format!("expected {OPTIONS_PER_ISSUE} option labels"),
        ));
    }
    if !(spec.xi > 0.0 && spec.xi.is_finite()) {
        out.push(Violation::new(format!("{prefix}.xi"), "xi must be positive"));
    }
    if !(spec.tau_min >= 0.0 && spec.tau_min <= spec.tau_max) {
        out.push(Violation::new(
            format!("{prefix}.tau_min"),
            "requires 0 <= tau_min <= tau_max",
        ));
    }
    if issue.payoffs.issue_id != spec.issue_id {
        out.push(Violation::new(
            format!("{prefix}.payoffs.issue_id"),
            "payoff matrix belongs to a different issue",
        ));
    }
    let all_payoffs = issue
        .payoffs
        .human_payoffs
        .iter()
        .chain(issue.payoffs.agent_payoffs.iter());
    if all_payoffs.into_iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        out.push(Violation::new(
            format!("{prefix}.payoffs"),
            "payoffs must be finite and non-negative",
        ));
    }
    out
}

/// Checks every type invariant of a finished session log. Returns an empty
/// list iff the log is well formed.
pub fn validate_session(log: &SessionLog) -> Vec<Violation> {
    let mut out = Vec::new();

    if log.dimensionality != log.task.len() {
        out.push(Violation::new(
            "dimensionality",
            "dimensionality does not match issue count",
        ));
    }
    if !(1..=MAX_DIMENSIONALITY).contains(&log.task.len()) {
        out.push(Violation::new(
            "task",
            format!("issue count must be within 1..={MAX_DIMENSIONALITY}"),
        ));
    }
    let mut seen = BTreeSet::new();
    for (i, issue) in log.task.iter().enumerate() {
        if !seen.insert(issue.id().clone()) {
            out.push(Violation::new(format!("task[{i}].issue_id"), "duplicate issue"));
        }
        out.extend(issue_violations(issue, &format!("task[{i}]")));
    }

    let issues = log.issue_ids();
    if log.turns.len() > log.caps.round_cap as usize {
        out.push(Violation::new("turns", "round cap exceeded"));
    }
    let mut last_submit = 0u64;
    for (i, turn) in log.turns.iter().enumerate() {
        let field = format!("turns[{i}]");
        if turn.turn_number as usize != i + 1 {
            out.push(Violation::new(
                format!("{field}.turn_number"),
                "turn numbers must run 1, 2, 3, ...",
            ));
        }
        if !turn.timing.is_monotone() {
            out.push(Violation::new(format!("{field}.timing"), "timestamps not monotone"));
        }
        if turn.timing.received_at < last_submit {
            out.push(Violation::new(
                format!("{field}.timing.received_at"),
                "turn starts before the previous turn was submitted",
            ));
        }
        last_submit = turn.timing.submitted_at;
        if turn.timing.submitted_at > log.caps.time_cap_ms {
            out.push(Violation::new(format!("{field}.timing"), "time cap exceeded"));
        }
        if turn.human_offer.proposer != Role::Human {
            out.push(Violation::new(
                format!("{field}.human_offer.proposer"),
                "human offer must be proposed by the human",
            ));
        }
        for (f, rule) in turn.human_offer.violations(&issues) {
            out.push(Violation::new(format!("{field}.human_offer.{f}"), rule));
        }
        match &turn.agent_offer {
            Some(offer) => {
                if offer.proposer != Role::Agent {
                    out.push(Violation::new(
                        format!("{field}.agent_offer.proposer"),
                        "agent offer must be proposed by the agent",
                    ));
                }
                for (f, rule) in offer.violations(&issues) {
                    out.push(Violation::new(format!("{field}.agent_offer.{f}"), rule));
                }
            }
            None if i + 1 != log.turns.len() => out.push(Violation::new(
                format!("{field}.agent_offer"),
                "only the closing turn may lack a counter-offer",
            )),
            None => {}
        }
    }

    match &log.outcome {
        None => out.push(Violation::new("outcome", "outcome missing")),
        Some(Outcome::Agreement { selections }) => {
            let probe = Offer::new(Role::Human, selections.clone());
            for (f, rule) in probe.violations(&issues) {
                out.push(Violation::new(format!("outcome.{f}"), rule));
            }
        }
        Some(_) => {}
    }
    out
}
