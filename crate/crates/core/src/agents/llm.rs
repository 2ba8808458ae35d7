//! Chat-completions backed landlord.
//!
//! The request/response plumbing sits behind [`ChatTransport`] so the agent
//! can be exercised against stubs. The HTTP transport needs the `llm`
//! feature.

use serde::{Deserialize, Serialize};

use super::offer_block::{format_offer, parse_offer};
use super::{AgentContext, AgentError, AgentKind, Negotiator};
use crate::domain::{IssueId, Offer, Role, TaskIssue, Turn};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are an AI negotiator in a property rental scenario. \
Your primary objective is to maximize your own utility score based on the provided payoff matrix. \
Avoid defaulting to compromise or fairness-based solutions unless they demonstrably increase your score. \
Do not anchor on middle options without strategic justification. \
Evaluate each proposal based solely on its impact on your utility and respond with clear strategic reasoning.";

pub const DEFAULT_USER_PROMPT: &str = "Based on your payoff matrix for the current negotiation issues, \
propose options that maximize your total utility score and provide explicit justification for your choices. \
Consider potential trade-offs across all issues when making your proposal.";

const PROTOCOL_INSTRUCTIONS: &str = "You play the landlord. End every reply with exactly one offer block: \
a line containing ```offer, then one line `issue_id = option_number` (1-7) per issue, then a line containing ```. \
To accept the tenant's proposal, repeat it unchanged in your offer block.";

/// Malformed replies tolerated before the session is aborted.
pub const MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmClientConfig {
    /// Base URL of a chat-completions compatible API.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub system_prompt: String,
    pub user_prompt: String,
    pub timeout_s: u64,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
}

impl Default for LlmClientConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4".into(),
            temperature: 0.2,
            max_tokens: 128,
            system_prompt: DEFAULT_SYSTEM_PROMPT.into(),
            user_prompt: DEFAULT_USER_PROMPT.into(),
            timeout_s: 30,
            api_key_env: "OPENAI_API_KEY".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub trait ChatTransport: Send {
    /// Returns the assistant message text.
    fn complete(&self, request: &ChatRequest) -> Result<String, AgentError>;
}

impl<F> ChatTransport for F
where
    F: Fn(&ChatRequest) -> Result<String, AgentError> + Send,
{
    fn complete(&self, request: &ChatRequest) -> Result<String, AgentError> {
        self(request)
    }
}

/// The agent's private payoff table, one line per issue.
pub fn render_payoff_table(task: &[TaskIssue]) -> String {
    let mut out = String::from("Your private payoff table:\n");
    for issue in task {
        out.push_str(&format!("{} ({}):", issue.id(), issue.spec.name));
        for (j, label) in issue.spec.option_labels.iter().enumerate() {
            out.push_str(&format!(
                " [{}] {label} = {}{}",
                j + 1,
                issue.payoffs.agent_payoffs[j],
                if j + 1 < issue.spec.option_labels.len() {
                    ";"
                } else {
                    ""
                }
            ));
        }
        out.push('\n');
    }
    out
}

pub fn render_transcript(transcript: &[Turn], current: &Offer) -> String {
    let mut out = String::from("Negotiation so far:\n");
    for turn in transcript {
        out.push_str(&format!(
            "Tenant (turn {}):\n{}\n",
            turn.turn_number,
            format_offer(&turn.human_offer)
        ));
        if let Some(agent) = &turn.agent_offer {
            out.push_str(&format!("You:\n{}\n", format_offer(agent)));
        }
    }
    out.push_str(&format!("Tenant (now):\n{}\n", format_offer(current)));
    out
}

pub fn build_request(
    config: &LlmClientConfig,
    task: &[TaskIssue],
    transcript: &[Turn],
    current: &Offer,
) -> ChatRequest {
    let system = format!("{}\n\n{}", config.system_prompt, PROTOCOL_INSTRUCTIONS);
    let user = format!(
        "{}\n\n{}\n{}",
        config.user_prompt,
        render_payoff_table(task),
        render_transcript(transcript, current)
    );
    ChatRequest {
        model: config.model.clone(),
        messages: vec![ChatMessage::new("system", system), ChatMessage::new("user", user)],
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    }
}

fn parse_complete(reply: &str, issues: &[IssueId]) -> Result<Offer, String> {
    let offer = parse_offer(reply, Role::Agent, issues).map_err(|e| e.to_string())?;
    if let Some(missing) = issues.iter().find(|i| !offer.selections.contains_key(*i)) {
        return Err(format!("offer block has no selection for {missing}"));
    }
    Ok(offer)
}

/// Requests a counter-offer, re-asking up to [`MAX_RETRIES`] times when the
/// reply carries no usable offer block.
pub fn llm_counter_offer<T: ChatTransport + ?Sized>(
    config: &LlmClientConfig,
    transport: &T,
    task: &[TaskIssue],
    transcript: &[Turn],
    current: &Offer,
) -> Result<Offer, AgentError> {
    let issues: Vec<IssueId> = task.iter().map(|t| t.id().clone()).collect();
    let mut request = build_request(config, task, transcript, current);
    let mut last_error = String::new();
    for _ in 0..=MAX_RETRIES {
        let reply = transport.complete(&request)?;
        match parse_complete(&reply, &issues) {
            Ok(offer) => return Ok(offer),
            Err(e) => {
                request.messages.push(ChatMessage::new("assistant", reply));
                request.messages.push(ChatMessage::new(
                    "user",
                    format!("Your reply could not be used ({e}). {PROTOCOL_INSTRUCTIONS}"),
                ));
                last_error = e;
            }
        }
    }
    Err(AgentError::MalformedReplies {
        attempts: MAX_RETRIES + 1,
        last_error,
    })
}

pub struct LlmNegotiator<T> {
    pub config: LlmClientConfig,
    transport: T,
}

impl<T: ChatTransport> LlmNegotiator<T> {
    pub fn new(config: LlmClientConfig, transport: T) -> Self {
        Self { config, transport }
    }
}

impl<T: ChatTransport> Negotiator for LlmNegotiator<T> {
    fn kind(&self) -> AgentKind {
        AgentKind::Llm
    }

    fn counter_offer(&mut self, ctx: &AgentContext<'_>) -> Result<Offer, AgentError> {
        llm_counter_offer(
            &self.config,
            &self.transport,
            ctx.task,
            ctx.transcript,
            ctx.last_human_offer,
        )
    }
}

#[cfg(feature = "llm")]
pub use http::HttpTransport;

#[cfg(feature = "llm")]
mod http {
    use std::time::Duration;

    use super::{AgentError, ChatRequest, ChatTransport, LlmClientConfig};

    /// Blocking HTTP transport for `POST {endpoint}/chat/completions`.
    pub struct HttpTransport {
        client: reqwest::blocking::Client,
        url: String,
        api_key: Option<String>,
    }

    impl HttpTransport {
        pub fn from_config(config: &LlmClientConfig) -> Result<Self, AgentError> {
            let client = reqwest::blocking::Client::builder()
                .timeout(Duration::from_secs(config.timeout_s))
                .build()
                .map_err(|e| AgentError::Transport(e.to_string()))?;
            Ok(Self {
                client,
                url: format!("{}/chat/completions", config.endpoint.trim_end_matches('/')),
                api_key: std::env::var(&config.api_key_env).ok(),
            })
        }
    }

    impl ChatTransport for HttpTransport {
        fn complete(&self, request: &ChatRequest) -> Result<String, AgentError> {
            let mut builder = self.client.post(&self.url).json(request);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let response = builder
                .send()
                .and_then(|r| r.error_for_status())
                .map_err(|e| AgentError::Transport(e.to_string()))?;
            let body: serde_json::Value = response.json().map_err(|e| AgentError::Transport(e.to_string()))?;
            body.pointer("/choices/0/message/content")
                .and_then(|v| v.as_str())
                .map(str::to_owned)
                .ok_or_else(|| AgentError::Transport("response has no message content".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::catalog::TaskCatalog;
    use crate::domain::OptionIndex;

    fn task() -> Vec<TaskIssue> {
        TaskCatalog::shipped().issues()[..2].to_vec()
    }

    fn human_offer(task: &[TaskIssue], label: usize) -> Offer {
        Offer::new(
            Role::Human,
            task.iter()
                .map(|t| (t.id().clone(), OptionIndex::from_label(label).unwrap()))
                .collect(),
        )
    }

    #[test]
    fn request_carries_fixed_generation_settings() {
        let task = task();
        let req = build_request(&LlmClientConfig::default(), &task, &[], &human_offer(&task, 7));
        assert_eq!(req.temperature, 0.2);
        assert_eq!(req.max_tokens, 128);
        assert_eq!(req.messages[0].role, "system");
        assert!(req.messages[0]
            .content
            .starts_with("You are an AI negotiator in a property rental scenario"));
        // Own payoffs are present, the human's column is not.
        let user = &req.messages[1].content;
        assert!(user.contains("= 95"));
        assert!(!user.contains("= 110"));
    }

    #[test]
    fn stub_reply_is_parsed() {
        let task = task();
        let stub = |_: &ChatRequest| -> Result<String, AgentError> {
            Ok("My terms.\n```offer\nutilities_included = 2\nmonthly_rent = 7\n```".into())
        };
        let offer = llm_counter_offer(&LlmClientConfig::default(), &stub, &task, &[], &human_offer(&task, 4)).unwrap();
        assert_eq!(offer.proposer, Role::Agent);
        assert_eq!(offer.selection(task[0].id()).unwrap().label(), 2);
        assert_eq!(offer.selection(task[1].id()).unwrap().label(), 7);
        assert_eq!(offer.note.as_deref(), Some("My terms."));
    }

    #[test]
    fn prose_three_times_exhausts_retries() {
        let task = task();
        let calls = Arc::new(AtomicU32::new(0));
        let counter = calls.clone();
        let stub = move |req: &ChatRequest| -> Result<String, AgentError> {
            let n = counter.fetch_add(1, Ordering::SeqCst);
            // Each retry appends the rejected reply and a correction.
            assert_eq!(req.messages.len(), 2 + 2 * n as usize);
            Ok("I would rather not say.".into())
        };
        let err =
            llm_counter_offer(&LlmClientConfig::default(), &stub, &task, &[], &human_offer(&task, 4)).unwrap_err();
        assert!(matches!(err, AgentError::MalformedReplies { attempts: 3, .. }));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn echoing_the_tenant_is_an_acceptance() {
        let task = task();
        let human = human_offer(&task, 5);
        let echo = |req: &ChatRequest| -> Result<String, AgentError> {
            let user = &req.messages[1].content;
            let start = user.rfind("```offer").unwrap();
            Ok(format!("Agreed.\n{}", user[start..].trim_end()))
        };
        let offer = llm_counter_offer(&LlmClientConfig::default(), &echo, &task, &[], &human).unwrap();
        assert!(offer.same_selections(&human));
    }

    #[test]
    fn incomplete_block_is_retried_then_accepted() {
        let task = task();
        let calls = AtomicU32::new(0);
        let stub = |_: &ChatRequest| -> Result<String, AgentError> {
            if calls.fetch_add(1, Ordering::SeqCst) == 0 {
                Ok("```offer\nutilities_included = 1\n```".into())
            } else {
                Ok("```offer\nutilities_included = 1\nmonthly_rent = 7\n```".into())
            }
        };
        assert!(llm_counter_offer(&LlmClientConfig::default(), &stub, &task, &[], &human_offer(&task, 4)).is_ok());
        assert_eq!(calls.load(Ordering::SeqCst), 2);
    }

    #[test]
    fn transport_failure_is_not_retried() {
        let task = task();
        let calls = AtomicU32::new(0);
        let stub = |_: &ChatRequest| -> Result<String, AgentError> {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(AgentError::Transport("connection refused".into()))
        };
        let err =
            llm_counter_offer(&LlmClientConfig::default(), &stub, &task, &[], &human_offer(&task, 4)).unwrap_err();
        assert!(matches!(err, AgentError::Transport(_)));
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }
}
