mod support;

use std::io;
use std::sync::atomic::{AtomicU32, Ordering};

use horizon_core::agents::{AgentContext, AgentError, Negotiator, ScriptedAgent};
use horizon_core::catalog::TaskCatalog;
use horizon_core::domain::{validate_session, IssueId, Offer, OptionIndex, Outcome, Role, TaskIssue, Timing};
use horizon_core::metrics::compute_metrics;
use horizon_core::session::replay;
use horizon_core::store::{decode_log, FsLogStore, LogStore, PersistOutcome};
use horizon_core::{AgentKind, Condition, Phase, Session, SessionConfig, SessionError};
use support::sim;

fn task(n: usize) -> Vec<TaskIssue> {
    TaskCatalog::shipped().issues()[..n].to_vec()
}

fn fresh(n: usize, condition: Condition) -> Session {
    Session::new(SessionConfig::new("t", condition, AgentKind::Scripted, 1), task(n)).unwrap()
}

#[test]
fn mirrored_counter_offer_closes_with_agreement() {
    let session = sim::run(task(3), Condition::DecisionSupport, 4, 4);
    assert_eq!(session.phase(), Phase::Agreed);
    let log = session.log();
    assert!(validate_session(log).is_empty(), "{:?}", validate_session(log));
    let agreed = log.outcome.as_ref().unwrap().agreement().unwrap();
    assert_eq!(agreed, &log.turns.last().unwrap().human_offer.selections);
    let countered = log.turns.iter().filter(|t| t.agent_offer.is_some()).count();
    assert_eq!(session.snapshots().len(), countered);
    assert_eq!(session.round() as usize, log.turns.len());
}

#[test]
fn sixteenth_submission_times_out_unlogged() {
    let session = sim::stubborn(task(2), 2);
    assert_eq!(session.phase(), Phase::TimedOut);
    assert_eq!(session.log().turns.len(), 15);
    assert_eq!(session.log().outcome, Some(Outcome::Timeout));
    assert!(validate_session(session.log()).is_empty());
    let report = compute_metrics(session.log());
    assert_eq!(report.total_turns, 15);
    assert_eq!(report.total_human_payoff_pct, None);
    assert_eq!(report.pareto_proximity, None);
}

#[test]
fn submission_past_time_cap_times_out() {
    let mut session = fresh(1, Condition::Baseline);
    let offer = sim::human_offer(session.task(), 1, None, 99);
    let late = Timing {
        received_at: 0,
        first_keystroke_at: 10,
        submitted_at: 900_001,
    };
    assert_eq!(session.submit_human_offer(offer, late).unwrap(), Phase::TimedOut);
    assert!(session.log().turns.is_empty());
}

#[test]
fn actions_out_of_phase_are_rejected() {
    let mut session = fresh(1, Condition::DecisionSupport);
    let mut agent = ScriptedAgent::new(0);
    assert!(matches!(
        session.advance_agent(&mut agent),
        Err(SessionError::PhaseViolation {
            actual: Phase::AwaitingHuman
        })
    ));
    let done = sim::run(task(1), Condition::DecisionSupport, 0, 2);
    let mut done = done;
    let offer = sim::human_offer(done.task(), 1, None, 99);
    assert!(matches!(
        done.submit_human_offer(offer, sim::timing(20)),
        Err(SessionError::PhaseViolation { actual: Phase::Agreed })
    ));
}

#[test]
fn rejected_offer_leaves_state_untouched() {
    let mut session = fresh(3, Condition::DecisionSupport);
    let before = session.clone();
    let mut partial = sim::human_offer(session.task(), 1, None, 99);
    let first = partial.selections.keys().next().unwrap().clone();
    partial.selections.remove(&first);
    partial.selections.insert(IssueId::new("parking"), OptionIndex::MIDDLE);
    let err = session.submit_human_offer(partial, sim::timing(1)).unwrap_err();
    match err {
        SessionError::InvalidOffer(problems) => {
            assert!(problems.iter().any(|p| p.contains("missing selection")));
            assert!(problems.iter().any(|p| p.contains("unknown issue")));
        }
        other => panic!("unexpected {other}"),
    }
    let backwards = Timing {
        received_at: 10,
        first_keystroke_at: 5,
        submitted_at: 20,
    };
    let offer = sim::human_offer(session.task(), 1, None, 99);
    assert!(matches!(
        session.submit_human_offer(offer, backwards),
        Err(SessionError::InvalidTiming(_))
    ));
    assert_eq!(session.log(), before.log());
    assert_eq!(session.beliefs(), before.beliefs());
    assert_eq!(session.phase(), Phase::AwaitingHuman);
}

#[test]
fn baseline_tracks_beliefs_but_hides_snapshots() {
    let support = sim::run(task(3), Condition::DecisionSupport, 9, 6);
    let baseline = sim::run(task(3), Condition::Baseline, 9, 6);
    assert_eq!(support.snapshots(), baseline.snapshots());
    assert_eq!(support.beliefs(), baseline.beliefs());
    assert!(baseline.visible_snapshot().is_none());
    assert!(support.visible_snapshot().is_some());
}

struct Failing;

impl Negotiator for Failing {
    fn kind(&self) -> AgentKind {
        AgentKind::Llm
    }

    fn counter_offer(&mut self, _: &AgentContext<'_>) -> Result<Offer, AgentError> {
        Err(AgentError::Transport("connection refused".into()))
    }
}

struct Sloppy;

impl Negotiator for Sloppy {
    fn kind(&self) -> AgentKind {
        AgentKind::Llm
    }

    fn counter_offer(&mut self, _: &AgentContext<'_>) -> Result<Offer, AgentError> {
        Ok(Offer::new(Role::Agent, Default::default()))
    }
}

#[test]
fn agent_failures_abort_the_session() {
    for agent in [&mut Failing as &mut dyn Negotiator, &mut Sloppy] {
        let mut session = fresh(2, Condition::DecisionSupport);
        let offer = sim::human_offer(session.task(), 1, None, 99);
        session.submit_human_offer(offer, sim::timing(1)).unwrap();
        assert_eq!(session.advance_agent(agent).unwrap(), Phase::Aborted);
        match session.log().outcome.as_ref().unwrap() {
            Outcome::Aborted { reason } => assert!(!reason.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
        assert!(validate_session(session.log()).is_empty());
        assert!(session.snapshots().is_empty());
    }
}

#[test]
fn finalize_is_idempotent_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let store = FsLogStore::new(dir.path());
    let mut live = fresh(1, Condition::DecisionSupport);
    assert!(matches!(
        live.finalize(Some(&store)),
        Err(SessionError::PhaseViolation { .. })
    ));

    let mut session = sim::run(task(5), Condition::DecisionSupport, 11, 5);
    let first = session.finalize(Some(&store)).unwrap();
    let second = session.finalize(Some(&store)).unwrap();
    assert_eq!(first, second);
    let entries: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(entries.len(), 1);

    let stored = store.load("s11").unwrap();
    assert_eq!(&stored.to_log(), session.log());
    assert_eq!(stored.snapshots, session.snapshots());
    assert_eq!(stored.footer.unwrap().metrics, first);

    let text = std::fs::read_to_string(store.path_for("s11")).unwrap();
    assert_eq!(decode_log(&text).unwrap().to_log(), *session.log());
}

struct Flaky {
    failures: u32,
    calls: AtomicU32,
}

impl LogStore for Flaky {
    fn persist(&self, _: &str, _: &str) -> io::Result<PersistOutcome> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            Err(io::Error::other("disk full"))
        } else {
            Ok(PersistOutcome::Written)
        }
    }
}

#[test]
fn storage_failures_are_retried_then_reported() {
    let mut session = sim::run(task(1), Condition::Baseline, 3, 3);
    let flaky = Flaky {
        failures: 2,
        calls: AtomicU32::new(0),
    };
    session.finalize(Some(&flaky)).unwrap();
    assert_eq!(flaky.calls.load(Ordering::SeqCst), 3);

    let mut session = sim::run(task(1), Condition::Baseline, 3, 3);
    let broken = Flaky {
        failures: u32::MAX,
        calls: AtomicU32::new(0),
    };
    let err = session.finalize(Some(&broken)).unwrap_err();
    assert!(matches!(err, SessionError::Storage { attempts: 3, .. }));
    assert!(session.log().outcome.is_some());
    let dir = tempfile::tempdir().unwrap();
    session.finalize(Some(&FsLogStore::new(dir.path()))).unwrap();
}

#[test]
fn replay_reproduces_log_snapshots_and_metrics() {
    for (seed, patience) in [(1, 3), (2, 7), (3, 0), (4, 12)] {
        let original = if patience == 0 {
            sim::stubborn(task(4), seed)
        } else {
            sim::run(task(4), Condition::DecisionSupport, seed, patience)
        };
        let config = original.config().clone();
        let again = replay(original.log(), config, &mut ScriptedAgent::new(seed)).unwrap();
        assert_eq!(again.log(), original.log());
        assert_eq!(again.snapshots(), original.snapshots());
        assert_eq!(again.phase(), original.phase());
        assert_eq!(compute_metrics(again.log()), compute_metrics(original.log()));
    }
}

#[test]
fn rejects_task_sizes_outside_range() {
    let config = SessionConfig::new("x", Condition::Baseline, AgentKind::Scripted, 0);
    assert!(matches!(
        Session::new(config.clone(), Vec::new()),
        Err(SessionError::InvalidTask(_))
    ));
    let mut many = TaskCatalog::shipped().issues().to_vec();
    many.push(many[0].clone());
    assert!(Session::new(config, many).is_err());
}
