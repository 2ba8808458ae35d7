//! Bayesian opponent model.
//!
//! One posterior PMF per issue over the seven options, read as "how likely is
//! this option acceptable to the agent". Each observed proposal multiplies the
//! prior by a likelihood term, a ZOPA boundary filter and an adaptive trust
//! weight, then renormalizes. Boundaries and consistency scores are derived
//! from the agent's proposal history only.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{IssueId, OptionIndex, Role, TaskIssue, OPTIONS_PER_ISSUE};

pub type Pmf = [f64; OPTIONS_PER_ISSUE];

pub const UNIFORM: Pmf = [1.0 / OPTIONS_PER_ISSUE as f64; OPTIONS_PER_ISSUE];

#[derive(Debug, Error, PartialEq)]
pub enum BeliefError {
    #[error("no belief tracked for issue {0}")]
    UnknownIssue(IssueId),
    #[error("proposed index {0} is outside 0..7")]
    IndexOutOfRange(usize),
    #[error("beliefs and task disagree on issue {0}")]
    TaskMismatch(IssueId),
}

/// Constants of the update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub direct_likelihood: f64,
    pub adjacent_likelihood: f64,
    pub distant_likelihood: f64,
    /// Variance that maps to zero confidence.
    pub variance_reference: f64,
    /// Slope (option indices per turn) that maps to zero temporal consistency.
    pub slope_reference: f64,
    pub proposal_share: f64,
    pub temporal_share: f64,
    pub agent_trust: f64,
    pub human_trust: f64,
    /// How many of the agent's latest proposals count as "direct" evidence.
    pub recency_window: usize,
    /// Agent proposals needed before the ZOPA filter is applied.
    pub min_boundary_history: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            direct_likelihood: 0.8,
            adjacent_likelihood: 0.4,
            distant_likelihood: 0.1,
            variance_reference: 3.0,
            slope_reference: 1.0,
            proposal_share: 0.6,
            temporal_share: 0.4,
            agent_trust: 0.7,
            human_trust: 0.3,
            recency_window: 3,
            min_boundary_history: 2,
        }
    }
}

impl ModelParams {
    /// Likelihood of `option` given the set of recently proposed options.
    /// Direct proposals take precedence over adjacency.
    pub fn likelihood(&self, recent: &[OptionIndex], option: OptionIndex, consistency: f64) -> f64 {
        if recent.contains(&option) {
            self.direct_likelihood * consistency
        } else if recent.iter().any(|p| p.get().abs_diff(option.get()) <= 1) {
            self.adjacent_likelihood
        } else {
            self.distant_likelihood
        }
    }

    pub fn adaptive_weight(&self, proposer: Role, s_consistency: f64, r_concession: f64) -> f64 {
        match proposer {
            Role::Agent => (self.agent_trust * (1.0 + s_consistency)).min(1.0),
            Role::Human => (self.human_trust * (1.0 + r_concession.abs())).min(1.0),
        }
    }
}

/// Likelihood of `option` after a single proposal of `proposed`.
pub fn likelihood(proposed: OptionIndex, option: OptionIndex, consistency: f64) -> f64 {
    ModelParams::default().likelihood(&[proposed], option, consistency)
}

pub fn adaptive_weight(proposer: Role, s_consistency: f64, r_concession: f64) -> f64 {
    ModelParams::default().adaptive_weight(proposer, s_consistency, r_concession)
}

/// Inclusive option-index interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZopaRange {
    pub lower: OptionIndex,
    pub upper: OptionIndex,
}

impl ZopaRange {
    /// Floors/ceils fractional limits and clamps them into the option range.
    pub fn from_limits(lower_limit: f64, upper_limit: f64) -> Self {
        let last = (OPTIONS_PER_ISSUE - 1) as f64;
        let lo = lower_limit.floor().clamp(0.0, last) as usize;
        let hi = upper_limit.ceil().clamp(0.0, last) as usize;
        Self {
            lower: OptionIndex::new(lo).expect("clamped"),
            upper: OptionIndex::new(hi.max(lo)).expect("clamped"),
        }
    }

    pub fn contains(&self, option: OptionIndex) -> bool {
        self.lower <= option && option <= self.upper
    }

    pub fn options(&self) -> impl Iterator<Item = OptionIndex> {
        (self.lower.get()..=self.upper.get()).filter_map(OptionIndex::new)
    }

    pub fn width(&self) -> usize {
        self.upper.get() - self.lower.get() + 1
    }
}

/// ZOPA from the agent's proposal history; `None` when nothing has been
/// proposed yet.
pub fn zopa_bounds(history: &[OptionIndex]) -> Option<ZopaRange> {
    let lower = history.iter().min()?;
    let upper = history.iter().max()?;
    Some(ZopaRange::from_limits(lower.get() as f64, upper.get() as f64))
}

pub fn population_variance(history: &[OptionIndex]) -> f64 {
    if history.is_empty() {
        return 0.0;
    }
    let n = history.len() as f64;
    let mean = history.iter().map(|o| o.get() as f64).sum::<f64>() / n;
    history.iter().map(|o| (o.get() as f64 - mean).powi(2)).sum::<f64>() / n
}

/// Least-squares slope of option index against proposal position.
pub fn proposal_slope(history: &[OptionIndex]) -> f64 {
    let n = history.len();
    if n < 2 {
        return 0.0;
    }
    let mean_x = (n as f64 + 1.0) / 2.0;
    let mean_y = history.iter().map(|o| o.get() as f64).sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (k, o) in history.iter().enumerate() {
        let dx = (k + 1) as f64 - mean_x;
        sxy += dx * (o.get() as f64 - mean_y);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn variance_confidence(history: &[OptionIndex], reference: f64) -> f64 {
    1.0 - (population_variance(history) / reference).min(1.0)
}

pub fn boundary_confidence(history: &[OptionIndex]) -> f64 {
    variance_confidence(history, ModelParams::default().variance_reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyScores {
    pub c_proposal: f64,
    pub c_temporal: f64,
    pub s_consistency: f64,
}

impl ConsistencyScores {
    pub const ZERO: Self = Self {
        c_proposal: 0.0,
        c_temporal: 0.0,
        s_consistency: 0.0,
    };
    pub const PERFECT: Self = Self {
        c_proposal: 1.0,
        c_temporal: 1.0,
        s_consistency: 1.0,
    };
}

pub fn consistency_score(history: &[OptionIndex]) -> ConsistencyScores {
    ModelParams::default().consistency(history)
}

impl ModelParams {
    pub fn boundary_confidence(&self, history: &[OptionIndex]) -> f64 {
        variance_confidence(history, self.variance_reference)
    }

    /// Proposal-variance and temporal-drift stability. Histories shorter than
    /// two proposals score 1 on every component.
    pub fn consistency(&self, history: &[OptionIndex]) -> ConsistencyScores {
        if history.len() < 2 {
            return ConsistencyScores::PERFECT;
        }
        let c_proposal = variance_confidence(history, self.variance_reference);
        let c_temporal = (1.0 - proposal_slope(history).abs() / self.slope_reference).clamp(0.0, 1.0);
        ConsistencyScores {
            c_proposal,
            c_temporal,
            s_consistency: self.proposal_share * c_proposal + self.temporal_share * c_temporal,
        }
    }
}

/// Mean per-turn concession over the last three transitions of a payoff
/// trajectory, normalized by the payoff range and clamped to [0, 1].
pub fn concession_rate(own_payoffs: &[f64], payoff_range: f64) -> f64 {
    if own_payoffs.len() < 2 || payoff_range <= 0.0 {
        return 0.0;
    }
    let steps: Vec<f64> = own_payoffs.windows(2).map(|w| (w[0] - w[1]).max(0.0)).collect();
    let recent = &steps[steps.len().saturating_sub(3)..];
    let mean = recent.iter().sum::<f64>() / recent.len() as f64;
    (mean / payoff_range).clamp(0.0, 1.0)
}

/// Posterior and derived boundary statistics for one issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueBelief {
    pub issue_id: IssueId,
    pub pmf: Pmf,
    /// Options the agent proposed on this issue, oldest first.
    pub proposal_history: Vec<OptionIndex>,
    pub zopa: Option<ZopaRange>,
    pub boundary_confidence: f64,
    pub consistency: ConsistencyScores,
}

impl IssueBelief {
    pub fn uniform(issue_id: IssueId) -> Self {
        Self {
            issue_id,
            pmf: UNIFORM,
            proposal_history: Vec::new(),
            zopa: None,
            boundary_confidence: 0.0,
            consistency: ConsistencyScores::ZERO,
        }
    }

    pub fn lower_limit(&self) -> Option<OptionIndex> {
        self.zopa.map(|z| z.lower)
    }

    pub fn upper_limit(&self) -> Option<OptionIndex> {
        self.zopa.map(|z| z.upper)
    }

    pub fn argmax(&self) -> OptionIndex {
        let (best, _) = self.pmf.iter().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (j, &p)| if p > acc.1 { (j, p) } else { acc },
        );
        OptionIndex::new(best).expect("in range")
    }

    /// Recomputes ZOPA, boundary confidence and consistency from the history.
    pub fn refresh(&mut self, params: &ModelParams) {
        self.zopa = zopa_bounds(&self.proposal_history);
        self.boundary_confidence = if self.proposal_history.is_empty() {
            0.0
        } else {
            params.boundary_confidence(&self.proposal_history)
        };
        self.consistency = params.consistency(&self.proposal_history);
    }

    /// ZOPA filter term; identically 1 until enough agent proposals exist.
    pub fn boundary_factor(&self, option: OptionIndex, params: &ModelParams) -> f64 {
        match self.zopa {
            Some(z) if self.proposal_history.len() >= params.min_boundary_history => {
                if z.contains(option) {
                    1.0
                } else {
                    1.0 - self.boundary_confidence
                }
            }
            _ => 1.0,
        }
    }
}

/// One observed proposal on one issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEvent {
    pub issue_id: IssueId,
    pub proposer: Role,
    pub proposed: OptionIndex,
    pub turn_number: u32,
    /// Normalized human concession rate; ignored for agent events.
    #[serde(default)]
    pub r_concession: f64,
}

/// Intermediate values of one update, kept for diagnostics and conformance
/// checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateTrace {
    pub weight: f64,
    /// Consistency gate applied to the direct-proposal likelihood.
    pub consistency_gate: f64,
    pub recent: Vec<OptionIndex>,
    pub unnormalized: Pmf,
    pub unnormalized_sum: f64,
    /// Normalization constant; `None` when the evidence was degenerate.
    pub eta: Option<f64>,
}

impl UpdateTrace {
    pub fn degenerate(&self) -> bool {
        self.eta.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub issues: Vec<IssueBelief>,
}

/// Uniform beliefs over the given issues.
pub fn init_beliefs<I>(issues: I) -> BeliefState
where
    I: IntoIterator<Item = IssueId>,
{
    BeliefState {
        issues: issues.into_iter().map(IssueBelief::uniform).collect(),
    }
}

impl BeliefState {
    pub fn issue(&self, id: &IssueId) -> Option<&IssueBelief> {
        self.issues.iter().find(|b| &b.issue_id == id)
    }

    fn issue_mut(&mut self, id: &IssueId) -> Result<&mut IssueBelief, BeliefError> {
        self.issues
            .iter_mut()
            .find(|b| &b.issue_id == id)
            .ok_or_else(|| BeliefError::UnknownIssue(id.clone()))
    }

    /// Folds one event into the state. On degenerate evidence (all mass
    /// zero) the issue falls back to the uniform PMF and the trace reports
    /// `eta == None`.
    pub fn apply(&mut self, event: &EvidenceEvent, params: &ModelParams) -> Result<UpdateTrace, BeliefError> {
        if !event.proposed.is_valid() {
            return Err(BeliefError::IndexOutOfRange(event.proposed.get()));
        }
        let belief = self.issue_mut(&event.issue_id)?;
        let factors = evidence_factors(belief, event, params);
        let mut unnormalized = [0.0; OPTIONS_PER_ISSUE];
        for j in 0..OPTIONS_PER_ISSUE {
            unnormalized[j] = factors.values[j] * belief.pmf[j];
        }
        let sum: f64 = unnormalized.iter().sum();
        let eta = if sum > 0.0 && sum.is_finite() {
            let eta = 1.0 / sum;
            for j in 0..OPTIONS_PER_ISSUE {
                belief.pmf[j] = unnormalized[j] * eta;
            }
            Some(eta)
        } else {
            belief.pmf = UNIFORM;
            None
        };
        if event.proposer == Role::Agent {
            // Already pushed by evidence_factors' refresh; commit it.
            belief.proposal_history = factors.history;
            belief.refresh(params);
        }
        Ok(UpdateTrace {
            weight: factors.weight,
            consistency_gate: factors.gate,
            recent: factors.recent,
            unnormalized,
            unnormalized_sum: sum,
            eta,
        })
    }
}

/// Per-option multiplier of one event: likelihood x boundary x weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceFactors {
    pub values: Pmf,
    pub weight: f64,
    pub gate: f64,
    pub recent: Vec<OptionIndex>,
    history: Vec<OptionIndex>,
}

/// Computes the multiplicative update an event applies to `belief`, with the
/// agent history, ZOPA and scores refreshed to include the event first.
pub fn evidence_factors(belief: &IssueBelief, event: &EvidenceEvent, params: &ModelParams) -> EvidenceFactors {
    let mut view = belief.clone();
    if event.proposer == Role::Agent {
        view.proposal_history.push(event.proposed);
        view.refresh(params);
    }
    let weight = params.adaptive_weight(event.proposer, view.consistency.s_consistency, event.r_concession);
    let gate = weight;
    let recent: Vec<OptionIndex> = match event.proposer {
        Role::Agent => {
            let h = &view.proposal_history;
            let mut recent: Vec<OptionIndex> = h[h.len().saturating_sub(params.recency_window.max(1))..].to_vec();
            recent.sort_unstable();
            recent.dedup();
            recent
        }
        Role::Human => vec![event.proposed],
    };
    let values = std::array::from_fn(|j| {
        let option = OptionIndex::new(j).expect("in range");
        params.likelihood(&recent, option, gate) * view.boundary_factor(option, params) * weight
    });
    EvidenceFactors {
        values,
        weight,
        gate,
        recent,
        history: view.proposal_history,
    }
}

/// Functional form of [`BeliefState::apply`].
pub fn bayesian_update(
    state: &BeliefState,
    event: &EvidenceEvent,
    params: &ModelParams,
) -> Result<(BeliefState, UpdateTrace), BeliefError> {
    let mut next = state.clone();
    let trace = next.apply(event, params)?;
    Ok((next, trace))
}

/// Constants of the visual mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisualParams {
    pub high_cap: f64,
    pub high_gain: f64,
    pub low_cap: f64,
    pub low_gain: f64,
}

impl Default for VisualParams {
    fn default() -> Self {
        Self {
            high_cap: 0.6,
            high_gain: 2.0,
            low_cap: 0.25,
            low_gain: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellTier {
    /// Outside both highlighted tiers.
    Unlit,
    /// Inside the human's utility band but not the promising tier.
    Acceptable,
    /// Inside the ZOPA and acceptable to the human.
    Promising,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityRow {
    pub issue_id: IssueId,
    pub intensities: [f64; OPTIONS_PER_ISSUE],
    pub tiers: [CellTier; OPTIONS_PER_ISSUE],
    pub zopa: Option<ZopaRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityGrid {
    pub rows: Vec<IntensityRow>,
}

impl IntensityGrid {
    pub fn cell_count(&self) -> usize {
        self.rows.len() * OPTIONS_PER_ISSUE
    }

    pub fn promising_count(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| r.tiers.iter())
            .filter(|t| **t == CellTier::Promising)
            .count()
    }
}

/// Intensity and tier of one cell.
pub fn cell_intensity(
    belief: &IssueBelief,
    issue: &TaskIssue,
    option: OptionIndex,
    visual: &VisualParams,
) -> (f64, CellTier) {
    let p = belief.pmf[option.get()];
    let u = issue.payoffs.human_payoffs[option.get()];
    let spec = &issue.spec;
    let in_zopa = belief.zopa.is_some_and(|z| z.contains(option));
    if in_zopa && u >= spec.tau_min {
        let raw = p
            * visual.high_gain
            * belief.boundary_confidence.sqrt()
            * (1.0 + belief.consistency.s_consistency)
            * spec.xi;
        (raw.min(visual.high_cap), CellTier::Promising)
    } else if spec.tau_min <= u && u <= spec.tau_max {
        ((p * visual.low_gain).min(visual.low_cap), CellTier::Acceptable)
    } else {
        (0.0, CellTier::Unlit)
    }
}

/// Renders the beliefs into per-cell intensities. Rows follow task order.
pub fn intensity_grid(
    state: &BeliefState,
    task: &[TaskIssue],
    visual: &VisualParams,
) -> Result<IntensityGrid, BeliefError> {
    let rows = task
        .iter()
        .map(|issue| {
            let belief = state
                .issue(issue.id())
                .ok_or_else(|| BeliefError::TaskMismatch(issue.id().clone()))?;
            let mut intensities = [0.0; OPTIONS_PER_ISSUE];
            let mut tiers = [CellTier::Unlit; OPTIONS_PER_ISSUE];
            for option in OptionIndex::all() {
                let (i, t) = cell_intensity(belief, issue, option, visual);
                intensities[option.get()] = i;
                tiers[option.get()] = t;
            }
            Ok(IntensityRow {
                issue_id: issue.id().clone(),
                intensities,
                tiers,
                zopa: belief.zopa,
            })
        })
        .collect::<Result<Vec<_>, BeliefError>>()?;
    Ok(IntensityGrid { rows })
}
