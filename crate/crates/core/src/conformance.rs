//! Golden-value check of the full update and rendering pipeline on one
//! issue: a landlord that has proposed options 4 and 5 (labels) over five
//! turns, with the utilities fixture as the payoff table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::belief::{cell_intensity, BeliefState, EvidenceEvent, IssueBelief, ModelParams, Pmf, VisualParams};
use crate::catalog::TaskCatalog;
use crate::domain::{OptionIndex, Role};

pub const GOLDEN_PRIOR: Pmf = [0.10, 0.12, 0.15, 0.22, 0.25, 0.10, 0.06];
/// Agent proposals as 1-based labels; the last one is the update under test.
pub const GOLDEN_HISTORY_LABELS: [usize; 5] = [4, 5, 4, 5, 5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: f64,
    pub tolerance: f64,
    pub actual: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, expected: f64, tolerance: f64, actual: f64) -> Self {
        Self {
            name: name.to_owned(),
            expected,
            tolerance,
            actual,
            passed: (actual - expected).abs() <= tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<28} expected {:>8.4} ±{:<6} actual {:>8.4}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.expected,
            self.tolerance,
            self.actual
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformanceReport {
    pub checks: Vec<Check>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for check in &self.checks {
            writeln!(f, "{check}")?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

fn label(l: usize) -> OptionIndex {
    OptionIndex::from_label(l).expect("golden labels are valid")
}

/// Runs the scenario with the given constants.
pub fn run_golden_scenario(params: &ModelParams, visual: &VisualParams) -> ConformanceReport {
    let catalog = TaskCatalog::shipped();
    let issue = catalog.fixture().expect("shipped catalog has the fixture").clone();
    let (current, earlier) = GOLDEN_HISTORY_LABELS.split_last().expect("non-empty");

    let mut belief = IssueBelief::uniform(issue.id().clone());
    belief.pmf = GOLDEN_PRIOR;
    belief.proposal_history = earlier.iter().map(|&l| label(l)).collect();
    belief.refresh(params);
    let mut state = BeliefState { issues: vec![belief] };

    let event = EvidenceEvent {
        issue_id: issue.id().clone(),
        proposer: Role::Agent,
        proposed: label(*current),
        turn_number: GOLDEN_HISTORY_LABELS.len() as u32,
        r_concession: 0.0,
    };
    let trace = state.apply(&event, params).expect("fixture issue is tracked");
    let belief = &state.issues[0];
    let zopa = belief.zopa.expect("history is non-empty");
    let intensity = |l: usize| cell_intensity(belief, &issue, label(l), visual).0;

    let checks = vec![
        Check::new("zopa_lower_label", 4.0, 0.0, zopa.lower.label() as f64),
        Check::new("zopa_upper_label", 5.0, 0.0, zopa.upper.label() as f64),
        Check::new("boundary_confidence", 0.92, 0.01, belief.boundary_confidence),
        Check::new("c_temporal", 0.8, 0.01, belief.consistency.c_temporal),
        Check::new("s_consistency", 0.86, 0.02, belief.consistency.s_consistency),
        Check::new("agent_weight", 1.0, 0.0, trace.weight),
        Check::new("unnormalized_sum", 0.386, 0.001, trace.unnormalized_sum),
        Check::new("eta", 2.59, 0.01, trace.eta.unwrap_or(f64::NAN)),
        Check::new("posterior_option_5", 0.52, 0.01, belief.pmf[label(5).get()]),
        Check::new("posterior_option_4", 0.45, 0.01, belief.pmf[label(4).get()]),
        Check::new("intensity_option_5", 0.6, 0.0, intensity(5)),
        Check::new("intensity_option_2", 0.0, 0.0, intensity(2)),
    ];
    ConformanceReport { checks }
}

/// The scenario with the stock constants.
pub fn conformance_appendix_a() -> ConformanceReport {
    run_golden_scenario(&ModelParams::default(), &VisualParams::default())
}
