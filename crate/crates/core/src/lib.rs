//! Negotiation engine: task catalog, opponent model, decision-support
//! widgets, session state machine, logging and metrics.

pub mod agents;
pub mod belief;
pub mod catalog;
pub mod conformance;
pub mod convergence;
pub mod domain;
pub mod metrics;
pub mod session;
pub mod store;

pub use agents::{AgentError, AgentKind, Negotiator, ScriptedAgent};
pub use belief::{BeliefState, IntensityGrid, ModelParams, VisualParams};
pub use catalog::TaskCatalog;
pub use convergence::ConvergenceSnapshot;
pub use domain::{IssueId, Offer, OptionIndex, Outcome, Role, SessionLog, TaskIssue, Timing, Turn};
pub use metrics::MetricsReport;
pub use session::{Condition, Phase, Session, SessionConfig, SessionError, TurnSnapshot};
