//! Simulated human negotiators for batch runs. They are test fixtures for
//! exercising the pipeline and the metrics, not models of real participants.
//! Each sees only what the API gives a human: its own payoff table and the
//! agent's offers.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use horizon_core::domain::{IssueId, OptionIndex, Timing, DEFAULT_ROUND_CAP, OPTIONS_PER_ISSUE};
use horizon_service::protocol::HumanIssueView;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HumanPolicy {
    /// Always demands its best option; concedes only by accepting.
    GreedyOwnMax,
    /// Splits the difference between its best option and the agent's.
    MidpointAnchoring,
    /// Samples among still-acceptable options, preferring unseen ones.
    EntropySeeking,
}

impl HumanPolicy {
    pub const ALL: [HumanPolicy; 3] = [
        HumanPolicy::GreedyOwnMax,
        HumanPolicy::MidpointAnchoring,
        HumanPolicy::EntropySeeking,
    ];

    /// `(floor, exponent)` of the aspiration schedule.
    fn schedule(self) -> (f64, f64) {
        match self {
            HumanPolicy::GreedyOwnMax => (0.4, 3.0),
            HumanPolicy::MidpointAnchoring => (0.4, 1.5),
            HumanPolicy::EntropySeeking => (0.3, 2.0),
        }
    }
}

impl fmt::Display for HumanPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HumanPolicy::GreedyOwnMax => "greedy-own-max",
            HumanPolicy::MidpointAnchoring => "midpoint-anchoring",
            HumanPolicy::EntropySeeking => "entropy-seeking",
        })
    }
}

impl FromStr for HumanPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        HumanPolicy::ALL
            .into_iter()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| format!("unknown human policy {s:?}"))
    }
}

fn normalized(issue: &HumanIssueView, option: OptionIndex) -> f64 {
    let col = &issue.human_payoffs;
    let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = col.iter().copied().fold(f64::INFINITY, f64::min);
    if max > min {
        (col[option.get()] - min) / (max - min)
    } else {
        1.0
    }
}

fn own_best(issue: &HumanIssueView) -> OptionIndex {
    let col = &issue.human_payoffs;
    let best = (0..OPTIONS_PER_ISSUE).fold(0, |b, j| if col[j] > col[b] { j } else { b });
    OptionIndex::new(best).expect("in range")
}

pub struct SimulatedHuman {
    policy: HumanPolicy,
    rng: ChaCha8Rng,
    proposed: BTreeMap<IssueId, Vec<OptionIndex>>,
}

impl SimulatedHuman {
    pub fn new(policy: HumanPolicy, seed: u64) -> Self {
        Self {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            proposed: BTreeMap::new(),
        }
    }

    pub fn policy(&self) -> HumanPolicy {
        self.policy
    }

    /// Normalized own-payoff level still acceptable at `turn`.
    pub fn aspiration(&self, turn: u32) -> f64 {
        let (floor, exponent) = self.policy.schedule();
        let progress = (turn as f64 / DEFAULT_ROUND_CAP as f64).min(1.0);
        1.0 - (1.0 - floor) * progress.powf(exponent)
    }

    /// Per issue: keeps the agent's standing option when it meets the
    /// aspiration, otherwise proposes according to the policy.
    pub fn offer(
        &mut self,
        task: &[HumanIssueView],
        turn: u32,
        standing: Option<&BTreeMap<IssueId, OptionIndex>>,
    ) -> BTreeMap<IssueId, OptionIndex> {
        let aspiration = self.aspiration(turn);
        let mut out = BTreeMap::new();
        for issue in task {
            let theirs = standing.and_then(|s| s.get(&issue.issue_id)).copied();
            let choice = match theirs {
                Some(o) if o.is_valid() && normalized(issue, o) >= aspiration => o,
                _ => self.propose(issue, theirs, aspiration),
            };
            self.proposed.entry(issue.issue_id.clone()).or_default().push(choice);
            out.insert(issue.issue_id.clone(), choice);
        }
        out
    }

    fn propose(&mut self, issue: &HumanIssueView, theirs: Option<OptionIndex>, aspiration: f64) -> OptionIndex {
        let best = own_best(issue);
        match self.policy {
            HumanPolicy::GreedyOwnMax => best,
            HumanPolicy::MidpointAnchoring => match theirs {
                Some(o) if o.is_valid() => {
                    let (a, b) = (best.get(), o.get());
                    // Round toward our own side.
                    let mid = if a <= b { (a + b) / 2 } else { (a + b).div_ceil(2) };
                    let mid = OptionIndex::new(mid).expect("between valid indices");
                    if normalized(issue, mid) >= aspiration {
                        mid
                    } else {
                        best
                    }
                }
                _ => best,
            },
            HumanPolicy::EntropySeeking => {
                let acceptable: Vec<OptionIndex> = OptionIndex::all()
                    .filter(|&o| normalized(issue, o) >= aspiration)
                    .collect();
                let seen = self.proposed.get(&issue.issue_id);
                let fresh: Vec<OptionIndex> = acceptable
                    .iter()
                    .copied()
                    .filter(|o| !seen.is_some_and(|s| s.contains(o)))
                    .collect();
                let pool = if fresh.is_empty() { &acceptable } else { &fresh };
                if pool.is_empty() {
                    best
                } else {
                    pool[self.rng.gen_range(0..pool.len())]
                }
            }
        }
    }

    /// Reading, typing and submitting times for a turn that becomes
    /// visible at `now_ms`, growing with the number of issues.
    pub fn timing(&mut self, now_ms: u64, issues: usize) -> Timing {
        let n = issues as u64;
        let received_at = now_ms + 800 + self.rng.gen_range(0..400);
        let first_keystroke_at = received_at + 1_500 + 300 * n + self.rng.gen_range(0..2_000);
        let submitted_at = first_keystroke_at + 2_000 + 600 * n + self.rng.gen_range(0..1_500);
        Timing {
            received_at,
            first_keystroke_at,
            submitted_at,
        }
    }
}
