//! Deterministic time-dependent (Boulware) landlord.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AgentContext, AgentError, AgentKind, Negotiator};
use crate::domain::{IssueId, Offer, OptionIndex, PayoffMatrix, Role, TaskIssue, DEFAULT_ROUND_CAP};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    /// Lowest own payoff the agent will settle for, per issue.
    pub reservation_utility: BTreeMap<IssueId, f64>,
    /// Concession exponent; values above 1 concede late.
    pub beta: f64,
    /// Deadline in rounds.
    pub horizon: u32,
    /// Rotates the choice among equally good options.
    pub seed: u64,
}

impl ScriptedPolicy {
    /// Default policy for a task: reservation at the median own payoff,
    /// beta 2, horizon equal to the round cap.
    pub fn for_task(task: &[TaskIssue], seed: u64) -> Self {
        let reservation_utility = task
            .iter()
            .map(|t| {
                let mut col = t.payoffs.agent_payoffs;
                col.sort_by(f64::total_cmp);
                (t.id().clone(), col[col.len() / 2])
            })
            .collect();
        Self {
            reservation_utility,
            beta: 2.0,
            horizon: DEFAULT_ROUND_CAP,
            seed,
        }
    }

    pub fn with_reservation(mut self, issue: IssueId, utility: f64) -> Self {
        self.reservation_utility.insert(issue, utility);
        self
    }

    fn reservation(&self, matrix: &PayoffMatrix) -> f64 {
        let max = matrix.max_payoff(Role::Agent);
        self.reservation_utility
            .get(&matrix.issue_id)
            .copied()
            .unwrap_or(max)
            .min(max)
    }

    /// Own-payoff aspiration at round `t`.
    pub fn target_utility(&self, matrix: &PayoffMatrix, t: u32) -> f64 {
        let max = matrix.max_payoff(Role::Agent);
        let res = self.reservation(matrix);
        let progress = (t.min(self.horizon) as f64 / self.horizon.max(1) as f64).powf(self.beta);
        max - (max - res) * progress
    }

    /// Option whose own payoff is closest to, but not below, the aspiration.
    pub fn proposal(&self, matrix: &PayoffMatrix, t: u32) -> OptionIndex {
        let target = self.target_utility(matrix, t);
        let col = &matrix.agent_payoffs;
        let eligible: Vec<usize> = (0..col.len()).filter(|&j| col[j] >= target).collect();
        let best = eligible.iter().map(|&j| col[j]).fold(f64::INFINITY, f64::min);
        let tied: Vec<usize> = eligible.into_iter().filter(|&j| col[j] == best).collect();
        let pick = tied[(self.seed % tied.len() as u64) as usize];
        OptionIndex::new(pick).expect("in range")
    }

    pub fn accepts(&self, matrix: &PayoffMatrix, t: u32, option: OptionIndex) -> bool {
        option.is_valid() && matrix.agent_payoffs[option.get()] >= self.target_utility(matrix, t)
    }
}

/// Per issue: keep the human's selection when it meets the aspiration,
/// otherwise propose the aspiration option.
pub fn scripted_counter_offer(
    policy: &ScriptedPolicy,
    task: &[TaskIssue],
    t: u32,
    last_human: Option<&Offer>,
) -> Offer {
    let selections = task
        .iter()
        .map(|issue| {
            let m = &issue.payoffs;
            let human = last_human.and_then(|o| o.selection(issue.id()));
            let choice = match human {
                Some(h) if policy.accepts(m, t, h) => h,
                _ => policy.proposal(m, t),
            };
            (issue.id().clone(), choice)
        })
        .collect();
    Offer::new(Role::Agent, selections)
}

/// [`ScriptedPolicy`] wrapped as a [`Negotiator`]. The policy is built from
/// the task on first use unless one was supplied.
#[derive(Debug, Clone, Default)]
pub struct ScriptedAgent {
    policy: Option<ScriptedPolicy>,
    seed: u64,
}

impl ScriptedAgent {
    pub fn new(seed: u64) -> Self {
        Self { policy: None, seed }
    }

    pub fn with_policy(policy: ScriptedPolicy) -> Self {
        Self {
            seed: policy.seed,
            policy: Some(policy),
        }
    }
}

impl Negotiator for ScriptedAgent {
    fn kind(&self) -> AgentKind {
        AgentKind::Scripted
    }

    fn counter_offer(&mut self, ctx: &AgentContext<'_>) -> Result<Offer, AgentError> {
        let seed = self.seed;
        let policy = self
            .policy
            .get_or_insert_with(|| ScriptedPolicy::for_task(ctx.task, seed));
        Ok(scripted_counter_offer(
            policy,
            ctx.task,
            ctx.turn,
            Some(ctx.last_human_offer),
        ))
    }
}
