//! Opponents the human negotiates against.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Offer, TaskIssue, Turn};

pub mod llm;
pub mod offer_block;
pub mod scripted;

pub use offer_block::{format_offer, parse_offer, OfferParseError};
pub use scripted::{scripted_counter_offer, ScriptedAgent, ScriptedPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Scripted,
    Llm,
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AgentKind::Scripted => "scripted",
            AgentKind::Llm => "llm",
        })
    }
}

impl FromStr for AgentKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scripted" => Ok(AgentKind::Scripted),
            "llm" => Ok(AgentKind::Llm),
            other => Err(format!("unknown agent kind {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("no valid offer after {attempts} replies: {last_error}")]
    MalformedReplies { attempts: u32, last_error: String },
    #[error("agent produced an invalid offer: {0}")]
    InvalidOffer(String),
}

/// Everything an agent may look at when producing a counter-offer. The task
/// carries the agent's own payoff column; the human's column is not consulted
/// by any shipped agent.
pub struct AgentContext<'a> {
    /// 1-based number of the turn being answered.
    pub turn: u32,
    pub task: &'a [TaskIssue],
    pub last_human_offer: &'a Offer,
    /// Completed turns before the current one.
    pub transcript: &'a [Turn],
}

pub trait Negotiator: Send {
    fn kind(&self) -> AgentKind;

    fn counter_offer(&mut self, ctx: &AgentContext<'_>) -> Result<Offer, AgentError>;
}
