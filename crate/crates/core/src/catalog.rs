//! The rental task catalog: issue set, Pareto analysis, anti-triviality
//! checks and seeded task sampling.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    issue_violations, IssueId, IssueSpec, OptionIndex, PayoffMatrix, Role, TaskIssue, MAX_DIMENSIONALITY,
    OPTIONS_PER_ISSUE,
};

const SHIPPED_CATALOG: &str = include_str!("../data/rental.toml");

/// Identifier of the mandatory fixture issue.
pub const FIXTURE_ISSUE: &str = "utilities_included";

/// Human and agent payoff columns of the "Utilities Included" fixture.
pub const FIXTURE_HUMAN: [f64; OPTIONS_PER_ISSUE] = [5.0, 15.0, 30.0, 55.0, 80.0, 100.0, 110.0];
pub const FIXTURE_AGENT: [f64; OPTIONS_PER_ISSUE] = [95.0, 85.0, 80.0, 65.0, 50.0, 35.0, 20.0];

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed catalog document: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid catalog: {0}")]
    Invalid(String),
    #[error("dimensionality {requested} outside 1..={available}")]
    DimensionalityOutOfRange { requested: usize, available: usize },
}

#[derive(Debug, Deserialize)]
struct CatalogDocument {
    issue: Vec<IssueRecord>,
}

#[derive(Debug, Deserialize)]
struct IssueRecord {
    id: String,
    name: String,
    options: Vec<String>,
    human: Vec<f64>,
    agent: Vec<f64>,
    xi: Option<f64>,
    tau_min: Option<f64>,
    tau_max: Option<f64>,
}

fn column(values: &[f64], id: &str, side: &str) -> Result<[f64; OPTIONS_PER_ISSUE], CatalogError> {
    values.try_into().map_err(|_| {
        CatalogError::Invalid(format!(
            "issue {id}: {side} column needs {OPTIONS_PER_ISSUE} payoffs, found {}",
            values.len()
        ))
    })
}

impl IssueRecord {
    fn into_issue(self) -> Result<TaskIssue, CatalogError> {
        let issue_id = IssueId::new(self.id.clone());
        let human = column(&self.human, &self.id, "human")?;
        let agent = column(&self.agent, &self.id, "agent")?;
        let payoffs = PayoffMatrix {
            issue_id: issue_id.clone(),
            human_payoffs: human,
            agent_payoffs: agent,
        };
        let spec = IssueSpec {
            issue_id,
            name: self.name,
            option_labels: self.options,
            xi: self.xi.unwrap_or(1.0),
            tau_min: self.tau_min.unwrap_or(human[OptionIndex::MIDDLE.get()]),
            tau_max: self.tau_max.unwrap_or_else(|| payoffs.max_payoff(Role::Human)),
        };
        Ok(TaskIssue { spec, payoffs })
    }
}

/// A read-only set of negotiable issues.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskCatalog {
    issues: Vec<TaskIssue>,
}

impl TaskCatalog {
    /// Builds a catalog after structural checks (option count, payoff signs,
    /// unique identifiers). Design-level checks live in
    /// [`validate_anti_triviality`].
    pub fn new(issues: Vec<TaskIssue>) -> Result<Self, CatalogError> {
        if issues.is_empty() {
            return Err(CatalogError::Invalid("catalog has no issues".into()));
        }
        let mut ids = BTreeSet::new();
        for issue in &issues {
            if !ids.insert(issue.id().clone()) {
                return Err(CatalogError::Invalid(format!("duplicate issue {}", issue.id())));
            }
            let problems = issue_violations(issue, issue.id().as_str());
            if let Some(first) = problems.first() {
                return Err(CatalogError::Invalid(first.to_string()));
            }
        }
        Ok(Self { issues })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, CatalogError> {
        let doc: CatalogDocument = toml::from_str(text)?;
        let issues = doc
            .issue
            .into_iter()
            .map(IssueRecord::into_issue)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(issues)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// The 16-issue rental catalog bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_toml_str(SHIPPED_CATALOG).expect("bundled catalog is valid")
    }

    pub fn issues(&self) -> &[TaskIssue] {
        &self.issues
    }

    pub fn len(&self) -> usize {
        self.issues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn get(&self, id: &IssueId) -> Option<&TaskIssue> {
        self.issues.iter().find(|i| i.id() == id)
    }

    pub fn fixture(&self) -> Option<&TaskIssue> {
        self.get(&IssueId::new(FIXTURE_ISSUE))
    }
}

/// Pareto analysis of a single issue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub issue_id: IssueId,
    pub joint_payoffs: [f64; OPTIONS_PER_ISSUE],
    pub joint_optimum_index: OptionIndex,
    pub joint_optimum_value: f64,
    /// Options not dominated in (human, agent) payoff space.
    pub frontier_indices: BTreeSet<OptionIndex>,
}

impl ParetoReport {
    /// Value left on the table by agreeing on `option`.
    pub fn shortfall(&self, option: OptionIndex) -> f64 {
        self.joint_optimum_value - self.joint_payoffs[option.get()]
    }
}

fn dominates(m: &PayoffMatrix, a: usize, b: usize) -> bool {
    let (ha, aa) = (m.human_payoffs[a], m.agent_payoffs[a]);
    let (hb, ab) = (m.human_payoffs[b], m.agent_payoffs[b]);
    ha >= hb && aa >= ab && (ha > hb || aa > ab)
}

pub fn pareto_report(m: &PayoffMatrix) -> ParetoReport {
    let joint: [f64; OPTIONS_PER_ISSUE] = std::array::from_fn(|j| m.human_payoffs[j] + m.agent_payoffs[j]);
    // First index wins ties.
    let (best, value) =
        joint.iter().copied().enumerate().fold(
            (0, f64::NEG_INFINITY),
            |acc, (j, v)| if v > acc.1 { (j, v) } else { acc },
        );
    let frontier = (0..OPTIONS_PER_ISSUE)
        .filter(|&j| !(0..OPTIONS_PER_ISSUE).any(|k| dominates(m, k, j)))
        .filter_map(OptionIndex::new)
        .collect();
    ParetoReport {
        issue_id: m.issue_id.clone(),
        joint_payoffs: joint,
        joint_optimum_index: OptionIndex::new(best).expect("index in range"),
        joint_optimum_value: value,
        frontier_indices: frontier,
    }
}

/// Thresholds of the anti-triviality gate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntiTrivialityConfig {
    /// Largest tolerated Spearman correlation between two human payoff
    /// progressions.
    pub correlation_threshold: f64,
    /// Largest number of issues whose joint optimum may sit at the middle
    /// option.
    pub middle_quota: usize,
    pub expected_issues: usize,
}

impl Default for AntiTrivialityConfig {
    fn default() -> Self {
        Self {
            correlation_threshold: 0.9,
            middle_quota: 4,
            expected_issues: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CatalogViolation {
    IssueCount { expected: usize, found: usize },
    FixtureMissing,
    FixtureAltered,
    OptimumAtIndividualMax { issue: IssueId, role: Role },
    CorrelatedProgressions { first: IssueId, second: IssueId, rho: f64 },
    TooManyMiddleOptima { count: usize, quota: usize },
}

impl fmt::Display for CatalogViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::IssueCount { expected, found } => {
                write!(f, "catalog holds {found} issues, expected {expected}")
            }
            Self::FixtureMissing => write!(f, "fixture issue {FIXTURE_ISSUE} missing"),
            Self::FixtureAltered => write!(f, "fixture issue {FIXTURE_ISSUE} altered"),
            Self::OptimumAtIndividualMax { issue, role } => {
                write!(f, "{issue}: joint optimum sits at the {role} maximum")
            }
            Self::CorrelatedProgressions { first, second, rho } => {
                write!(f, "{first} and {second}: human progressions correlate at {rho:.3}")
            }
            Self::TooManyMiddleOptima { count, quota } => write!(
                f,
                "{count} issues have their joint optimum at the middle option (quota {quota})"
            ),
        }
    }
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    assert_eq!(a.len(), b.len());
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

fn argmax_set(values: &[f64; OPTIONS_PER_ISSUE]) -> BTreeSet<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..OPTIONS_PER_ISSUE).filter(|&j| values[j] == max).collect()
}

pub fn validate_anti_triviality(catalog: &TaskCatalog) -> Vec<CatalogViolation> {
    validate_anti_triviality_with(catalog, &AntiTrivialityConfig::default())
}

pub fn validate_anti_triviality_with(catalog: &TaskCatalog, config: &AntiTrivialityConfig) -> Vec<CatalogViolation> {
    let mut out = Vec::new();
    let issues = catalog.issues();
    if issues.len() != config.expected_issues {
        out.push(CatalogViolation::IssueCount {
            expected: config.expected_issues,
            found: issues.len(),
        });
    }
    match catalog.fixture() {
        None => out.push(CatalogViolation::FixtureMissing),
        Some(f) if f.payoffs.human_payoffs != FIXTURE_HUMAN || f.payoffs.agent_payoffs != FIXTURE_AGENT => {
            out.push(CatalogViolation::FixtureAltered)
        }
        Some(_) => {}
    }

    let mut middle = 0;
    for issue in issues {
        let m = &issue.payoffs;
        let joint: [f64; OPTIONS_PER_ISSUE] = std::array::from_fn(|j| m.joint(OptionIndex::new(j).unwrap()));
        let optima = argmax_set(&joint);
        for role in [Role::Human, Role::Agent] {
            let best = argmax_set(m.column(role));
            if !optima.is_disjoint(&best) {
                out.push(CatalogViolation::OptimumAtIndividualMax {
                    issue: issue.id().clone(),
                    role,
                });
            }
        }
        if optima.contains(&OptionIndex::MIDDLE.get()) {
            middle += 1;
        }
    }
    if middle > config.middle_quota {
        out.push(CatalogViolation::TooManyMiddleOptima {
            count: middle,
            quota: config.middle_quota,
        });
    }

    for (i, a) in issues.iter().enumerate() {
        for b in &issues[i + 1..] {
            if let Some(rho) = spearman(&a.payoffs.human_payoffs, &b.payoffs.human_payoffs) {
                if rho > config.correlation_threshold {
                    out.push(CatalogViolation::CorrelatedProgressions {
                        first: a.id().clone(),
                        second: b.id().clone(),
                        rho,
                    });
                }
            }
        }
    }
    out
}

/// Draws `n` distinct issues, deterministically under `seed`. The result
/// keeps catalog order.
pub fn sample_task(catalog: &TaskCatalog, n: usize, seed: u64) -> Result<Vec<TaskIssue>, CatalogError> {
    let available = catalog.len().min(MAX_DIMENSIONALITY);
    if n == 0 || n > available {
        return Err(CatalogError::DimensionalityOutOfRange {
            requested: n,
            available,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, catalog.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| catalog.issues[i].clone()).collect())
}
