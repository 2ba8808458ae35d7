//! Behavioural and outcome metrics computed from a session log.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::catalog::{pareto_report, ParetoReport};
use crate::domain::{IssueId, Offer, OptionIndex, Role, SessionLog, OPTIONS_PER_ISSUE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Human payoff at agreement as a percentage of the session maximum.
    pub total_human_payoff_pct: Option<f64>,
    pub joint_payoff: Option<f64>,
    pub pareto_proximity: Option<f64>,
    pub total_turns: u32,
    pub chat_duration_s: f64,
    pub avg_first_keystroke_s: Option<f64>,
    pub backtracking_count: u32,
    pub concessions: ConcessionStats,
    pub sequence_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcessionStats {
    pub count: u32,
    /// Mean over conceding turns; 0 when there were none.
    pub avg_magnitude: f64,
    /// Total concession for every turn after the first.
    pub per_turn: Vec<f64>,
    /// No concession was ever made.
    pub empty: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub chat_duration_s: f64,
    pub avg_first_keystroke_s: Option<f64>,
    pub total_turns: u32,
}

/// Shannon entropy in bits of an empirical distribution over options.
pub fn shannon_entropy(choices: &[OptionIndex]) -> f64 {
    if choices.is_empty() {
        return 0.0;
    }
    let mut counts = [0usize; OPTIONS_PER_ISSUE];
    for c in choices {
        counts[c.get().min(OPTIONS_PER_ISSUE - 1)] += 1;
    }
    let n = choices.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Average per-issue entropy of the human's proposals.
pub fn sequence_entropy(log: &SessionLog) -> f64 {
    let issues = log.issue_ids();
    if issues.is_empty() || log.turns.is_empty() {
        return 0.0;
    }
    let total: f64 = issues
        .iter()
        .map(|issue| {
            let choices: Vec<OptionIndex> = log.human_offers().filter_map(|o| o.selection(issue)).collect();
            shannon_entropy(&choices)
        })
        .sum();
    total / issues.len() as f64
}

fn own_payoff(log: &SessionLog, role: Role, issue: &IssueId, offer: &Offer) -> Option<f64> {
    let option = offer.selection(issue)?;
    let matrix = &log.issue(issue)?.payoffs;
    option.is_valid().then(|| matrix.payoff(role, option))
}

pub fn concession_stats(log: &SessionLog, role: Role) -> ConcessionStats {
    let offers = log.offers_by(role);
    let issues = log.issue_ids();
    let per_turn: Vec<f64> = offers
        .windows(2)
        .map(|w| {
            issues
                .iter()
                .filter_map(|issue| {
                    let prev = own_payoff(log, role, issue, w[0])?;
                    let cur = own_payoff(log, role, issue, w[1])?;
                    Some((prev - cur).max(0.0))
                })
                .sum()
        })
        .collect();
    let conceding: Vec<f64> = per_turn.iter().copied().filter(|m| *m > 0.0).collect();
    let count = conceding.len() as u32;
    let avg_magnitude = if conceding.is_empty() {
        0.0
    } else {
        conceding.iter().sum::<f64>() / conceding.len() as f64
    };
    ConcessionStats {
        count,
        avg_magnitude,
        per_turn,
        empty: conceding.is_empty(),
    }
}

/// Human turns that return to an earlier selection vector after having moved
/// away from it. Immediate repetition does not count.
pub fn backtracking_count(log: &SessionLog) -> u32 {
    let vectors: Vec<&BTreeMap<IssueId, OptionIndex>> = log.human_offers().map(|o| &o.selections).collect();
    (1..vectors.len())
        .filter(|&k| vectors[k] != vectors[k - 1] && vectors[..k - 1].contains(&vectors[k]))
        .count() as u32
}

/// Mean joint-payoff shortfall from each issue's joint optimum. `None` unless
/// the session ended in agreement.
pub fn pareto_proximity(log: &SessionLog, reports: &[ParetoReport]) -> Option<f64> {
    let agreement = log.outcome.as_ref()?.agreement()?;
    if reports.is_empty() {
        return None;
    }
    let mut total = 0.0;
    for report in reports {
        let option = *agreement.get(&report.issue_id)?;
        let matrix = &log.issue(&report.issue_id)?.payoffs;
        total += report.joint_optimum_value - matrix.joint(option);
    }
    Some(total / reports.len() as f64)
}

pub fn timing_stats(log: &SessionLog) -> TimingStats {
    let total_turns = log.turns.len() as u32;
    let (Some(first), Some(last)) = (log.turns.first(), log.turns.last()) else {
        return TimingStats {
            chat_duration_s: 0.0,
            avg_first_keystroke_s: None,
            total_turns,
        };
    };
    let duration_ms = last.timing.submitted_at.saturating_sub(first.timing.received_at);
    let latencies: Vec<f64> = log
        .turns
        .iter()
        .skip(1)
        .map(|t| t.timing.first_keystroke_at.saturating_sub(t.timing.received_at) as f64 / 1000.0)
        .collect();
    let avg = (!latencies.is_empty()).then(|| latencies.iter().sum::<f64>() / latencies.len() as f64);
    TimingStats {
        chat_duration_s: duration_ms as f64 / 1000.0,
        avg_first_keystroke_s: avg,
        total_turns,
    }
}

pub fn compute_metrics(log: &SessionLog) -> MetricsReport {
    let reports: Vec<ParetoReport> = log.task.iter().map(|t| pareto_report(&t.payoffs)).collect();
    let agreement = log.outcome.as_ref().and_then(|o| o.agreement());
    let (human_pct, joint) = match agreement {
        Some(selections) => {
            let mut human = 0.0;
            let mut human_max = 0.0;
            let mut joint = 0.0;
            for issue in &log.task {
                let m = &issue.payoffs;
                human_max += m.max_payoff(Role::Human);
                if let Some(&o) = selections.get(issue.id()) {
                    if o.is_valid() {
                        human += m.payoff(Role::Human, o);
                        joint += m.joint(o);
                    }
                }
            }
            let pct = if human_max > 0.0 {
                (human / human_max * 100.0).clamp(0.0, 100.0)
            } else {
                0.0
            };
            (Some(pct), Some(joint))
        }
        None => (None, None),
    };
    let timing = timing_stats(log);
    MetricsReport {
        total_human_payoff_pct: human_pct,
        joint_payoff: joint,
        pareto_proximity: pareto_proximity(log, &reports),
        total_turns: timing.total_turns,
        chat_duration_s: timing.chat_duration_s,
        avg_first_keystroke_s: timing.avg_first_keystroke_s,
        backtracking_count: backtracking_count(log),
        concessions: concession_stats(log, Role::Human),
        sequence_entropy: sequence_entropy(log),
    }
}
