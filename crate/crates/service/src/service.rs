//! Transport-agnostic session registry. Commands on one session are
//! serialized by a per-session lock; envelopes are appended to the session's
//! history and fanned out to subscribers while that lock is held, so every
//! subscriber sees engine transition order.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use horizon_core::agents::{format_offer, parse_offer, Negotiator, ScriptedAgent};
use horizon_core::catalog::{sample_task, TaskCatalog};
use horizon_core::domain::{Offer, Role, MAX_DIMENSIONALITY};
use horizon_core::store::LogStore;
use horizon_core::{AgentKind, Condition, Phase, Session, SessionConfig, SessionError};
use thiserror::Error;
use tokio::sync::broadcast;

use crate::protocol::{
    BeliefSnapshotView, ConvergenceView, CreateSessionRequest, CreateSessionResponse, Envelope, ErrorBody, Event,
    HumanIssueView, HumanMetrics, PostOfferRequest, SessionDescriptor, SessionEnded, SessionStatus, TurnResult,
    PROTOCOL_VERSION,
};

const STREAM_CAPACITY: usize = 256;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("missing or wrong session token")]
    Unauthorized,
    #[error("invalid session configuration: {0}")]
    InvalidConfig(String),
    #[error("agent kind {0} is not available on this server")]
    AgentUnavailable(AgentKind),
    #[error("malformed offer: {0}")]
    MalformedOffer(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::Unauthorized => "unauthorized",
            ServiceError::InvalidConfig(_) => "invalid_config",
            ServiceError::AgentUnavailable(_) => "agent_unavailable",
            ServiceError::MalformedOffer(_) => "malformed_offer",
            ServiceError::Session(e) => match e {
                SessionError::PhaseViolation { .. } => "phase_violation",
                SessionError::InvalidOffer(_) => "invalid_offer",
                SessionError::InvalidTiming(_) => "invalid_timing",
                SessionError::InvalidTask(_) => "invalid_config",
                SessionError::Belief(_) => "internal",
                SessionError::Storage { .. } => "storage_failed",
            },
        }
    }

    pub fn body(&self) -> ErrorBody {
        let violations = match self {
            ServiceError::Session(SessionError::InvalidOffer(v)) => v.clone(),
            _ => Vec::new(),
        };
        ErrorBody {
            code: self.code().to_owned(),
            message: self.to_string(),
            violations,
        }
    }
}

/// Builds the negotiator for a new session, or `None` if the kind is not
/// served.
pub type AgentFactory = Arc<dyn Fn(AgentKind, u64) -> Option<Box<dyn Negotiator>> + Send + Sync>;

pub fn scripted_only() -> AgentFactory {
    Arc::new(|kind, seed| match kind {
        AgentKind::Scripted => Some(Box::new(ScriptedAgent::new(seed)) as Box<dyn Negotiator>),
        AgentKind::Llm => None,
    })
}

#[derive(Clone)]
pub struct ServiceConfig {
    pub catalog: TaskCatalog,
    pub store: Option<Arc<dyn LogStore>>,
    pub agents: AgentFactory,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            catalog: TaskCatalog::shipped(),
            store: None,
            agents: scripted_only(),
        }
    }
}

struct Entry {
    session: Session,
    agent: Box<dyn Negotiator>,
    descriptor: SessionDescriptor,
    token: String,
    history: Vec<Envelope>,
    tx: broadcast::Sender<Envelope>,
}

impl Entry {
    fn emit(&mut self, event: Event) -> Envelope {
        let envelope = Envelope {
            protocol_version: PROTOCOL_VERSION,
            session_id: self.descriptor.session_id.clone(),
            seq: self.history.len() as u64 + 1,
            event,
        };
        self.history.push(envelope.clone());
        // No subscribers is fine; they can catch up from the history.
        let _ = self.tx.send(envelope.clone());
        envelope
    }

    fn check_token(&self, token: &str) -> Result<(), ServiceError> {
        if token == self.token {
            Ok(())
        } else {
            Err(ServiceError::Unauthorized)
        }
    }
}

struct Inner {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Entry>>>>,
    counter: AtomicU64,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl Service {
    pub fn new(config: ServiceConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: Mutex::new(HashMap::new()),
                counter: AtomicU64::new(0),
            }),
        }
    }

    fn entry(&self, session_id: &str) -> Result<Arc<Mutex<Entry>>, ServiceError> {
        lock(&self.inner.sessions)
            .get(session_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownSession(session_id.to_owned()))
    }

    pub fn create_session(&self, req: CreateSessionRequest) -> Result<CreateSessionResponse, ServiceError> {
        let number = self.inner.counter.fetch_add(1, Ordering::SeqCst) + 1;
        self.create_session_with_id(format!("session-{number:06}"), req)
    }

    /// Like [`Service::create_session`] with a caller-chosen id, for
    /// reproducible batch runs.
    pub fn create_session_with_id(
        &self,
        session_id: String,
        req: CreateSessionRequest,
    ) -> Result<CreateSessionResponse, ServiceError> {
        let usable = !session_id.is_empty()
            && !session_id.starts_with('.')
            && session_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !usable {
            return Err(ServiceError::InvalidConfig(format!(
                "unusable session id {session_id:?}"
            )));
        }
        if lock(&self.inner.sessions).contains_key(&session_id) {
            return Err(ServiceError::InvalidConfig(format!(
                "session id {session_id:?} already in use"
            )));
        }
        let n = req.dimensionality;
        if !(1..=MAX_DIMENSIONALITY).contains(&n) {
            return Err(ServiceError::InvalidConfig(format!(
                "dimensionality {n} outside 1..={MAX_DIMENSIONALITY}"
            )));
        }
        let seed = req.seed.unwrap_or_else(|| uuid::Uuid::new_v4().as_u64_pair().0);
        let task =
            sample_task(&self.inner.config.catalog, n, seed).map_err(|e| ServiceError::InvalidConfig(e.to_string()))?;
        let agent = (self.inner.config.agents)(req.agent, seed).ok_or(ServiceError::AgentUnavailable(req.agent))?;

        let mut config = SessionConfig::new(session_id.clone(), req.condition, req.agent, seed);
        if let Some(caps) = req.caps {
            if caps.round_cap == 0 || caps.time_cap_ms == 0 {
                return Err(ServiceError::InvalidConfig("caps must be positive".into()));
            }
            config.caps = caps;
        }
        let caps = config.caps;
        let session = Session::new(config, task)?;
        let descriptor = SessionDescriptor {
            protocol_version: PROTOCOL_VERSION,
            session_id: session_id.clone(),
            condition: req.condition,
            agent: req.agent,
            seed,
            dimensionality: n,
            canonical: SessionDescriptor::is_canonical(n),
            caps,
            issues: session.task().iter().map(HumanIssueView::from).collect(),
        };
        let token = uuid::Uuid::new_v4().simple().to_string();
        let (tx, _) = broadcast::channel(STREAM_CAPACITY);
        let mut entry = Entry {
            session,
            agent,
            descriptor: descriptor.clone(),
            token: token.clone(),
            history: Vec::new(),
            tx,
        };
        entry.emit(Event::SessionCreated(descriptor.clone()));
        lock(&self.inner.sessions).insert(session_id, Arc::new(Mutex::new(entry)));
        tracing::debug!(session = %descriptor.session_id, n, "session created");
        Ok(CreateSessionResponse {
            session: descriptor,
            token,
        })
    }

    pub fn status(&self, session_id: &str, token: &str) -> Result<SessionStatus, ServiceError> {
        let entry = self.entry(session_id)?;
        let entry = lock(&entry);
        entry.check_token(token)?;
        Ok(SessionStatus {
            session: entry.descriptor.clone(),
            phase: entry.session.phase(),
            round: entry.session.round(),
            last_seq: entry.history.len() as u64,
        })
    }

    /// Applies a human offer, runs the agent, and returns the envelopes the
    /// command produced. Rejected commands also emit an `error` envelope.
    /// May block on the agent.
    pub fn post_offer(
        &self,
        session_id: &str,
        token: &str,
        req: PostOfferRequest,
    ) -> Result<Vec<Envelope>, ServiceError> {
        let entry = self.entry(session_id)?;
        let mut entry = lock(&entry);
        entry.check_token(token)?;
        match self.apply_offer(&mut entry, req) {
            Ok(envelopes) => Ok(envelopes),
            Err(e) => {
                entry.emit(Event::Error(e.body()));
                Err(e)
            }
        }
    }

    fn apply_offer(&self, entry: &mut Entry, req: PostOfferRequest) -> Result<Vec<Envelope>, ServiceError> {
        let ids = entry.session.log().issue_ids();
        let offer = match (req.selections, req.message) {
            (Some(selections), message) => Offer {
                proposer: Role::Human,
                selections,
                note: message.filter(|m| !m.trim().is_empty()),
            },
            (None, Some(message)) => {
                parse_offer(&message, Role::Human, &ids).map_err(|e| ServiceError::MalformedOffer(e.to_string()))?
            }
            (None, None) => {
                return Err(ServiceError::MalformedOffer(
                    "either selections or a message with an offer block is required".into(),
                ))
            }
        };

        let start = entry.history.len();
        let snapshots_before = entry.session.snapshots().len();
        let turns_before = entry.session.log().turns.len();
        let mut phase = entry.session.submit_human_offer(offer, req.timing)?;
        if phase == Phase::AwaitingAgent {
            let Entry { session, agent, .. } = &mut *entry;
            phase = session.advance_agent(agent.as_mut())?;
        }

        if entry.session.log().turns.len() > turns_before {
            let turn = entry.session.log().turns.last().cloned().expect("turn logged");
            let agent_message = turn.agent_offer.as_ref().map(format_offer);
            entry.emit(Event::TurnResult(TurnResult {
                turn_number: turn.turn_number,
                human_offer: turn.human_offer,
                agent_offer: turn.agent_offer,
                agent_message,
                phase,
            }));
        }
        if entry.session.config().condition == Condition::DecisionSupport
            && entry.session.snapshots().len() > snapshots_before
        {
            let snap = entry.session.snapshots().last().cloned().expect("new snapshot");
            entry.emit(Event::BeliefSnapshot(BeliefSnapshotView::from(&snap)));
            entry.emit(Event::ConvergenceSnapshot(ConvergenceView {
                turn_number: snap.turn_number,
                snapshot: snap.convergence,
            }));
        }
        if phase.is_terminal() {
            self.finish(entry);
        }
        Ok(entry.history[start..].to_vec())
    }

    fn finish(&self, entry: &mut Entry) {
        let store = self.inner.config.store.clone();
        let result = entry.session.finalize(store.as_deref());
        if let Err(e) = &result {
            tracing::warn!(session = %entry.descriptor.session_id, error = %e, "session log not stored");
        }
        let report = match (&result, entry.session.report()) {
            (Ok(r), _) => r.clone(),
            (Err(_), Some(r)) => r.clone(),
            (Err(_), None) => return,
        };
        let outcome = entry
            .session
            .log()
            .outcome
            .clone()
            .expect("terminal session has an outcome");
        entry.emit(Event::SessionEnded(SessionEnded {
            phase: entry.session.phase(),
            outcome,
            metrics: HumanMetrics::from(&report),
        }));
        if let Err(e) = result {
            entry.emit(Event::Error(ServiceError::from(e).body()));
        }
    }

    /// Ends a live session whose wall clock ran out.
    pub fn expire(&self, session_id: &str, now_ms: u64) -> Result<bool, ServiceError> {
        let entry = self.entry(session_id)?;
        let mut entry = lock(&entry);
        if entry.session.expire(now_ms) {
            self.finish(&mut entry);
            return Ok(true);
        }
        Ok(false)
    }

    /// Envelopes with `seq > since`.
    pub fn events_since(&self, session_id: &str, token: &str, since: u64) -> Result<Vec<Envelope>, ServiceError> {
        let entry = self.entry(session_id)?;
        let entry = lock(&entry);
        entry.check_token(token)?;
        Ok(entry.history.iter().filter(|e| e.seq > since).cloned().collect())
    }

    /// Backlog after `since` plus a receiver for later envelopes. Taken under
    /// the session lock, so nothing is missed or duplicated between the two.
    pub fn subscribe(
        &self,
        session_id: &str,
        token: &str,
        since: u64,
    ) -> Result<(Vec<Envelope>, broadcast::Receiver<Envelope>), ServiceError> {
        let entry = self.entry(session_id)?;
        let entry = lock(&entry);
        entry.check_token(token)?;
        let backlog = entry.history.iter().filter(|e| e.seq > since).cloned().collect();
        Ok((backlog, entry.tx.subscribe()))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = lock(&self.inner.sessions).keys().cloned().collect();
        ids.sort();
        ids
    }
}
