//! Session lifecycle API and live event stream for the negotiation
//! workbench.

pub mod http;
pub mod protocol;
pub mod service;

pub use http::router;
pub use protocol::{Envelope, Event, PROTOCOL_HEADER, PROTOCOL_VERSION, TOKEN_HEADER};
pub use service::{scripted_only, AgentFactory, Service, ServiceConfig, ServiceError};
