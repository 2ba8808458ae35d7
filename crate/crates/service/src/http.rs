//! HTTP and WebSocket binding of [`Service`].
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | POST | `/v1/sessions` | `CreateSessionRequest` | 201 `CreateSessionResponse` |
//! | GET | `/v1/sessions/{id}` | | `SessionStatus` |
//! | POST | `/v1/sessions/{id}/offers` | `PostOfferRequest` | `EnvelopeBatch` |
//! | GET | `/v1/sessions/{id}/events` | `?since=N` | `EnvelopeBatch` |
//! | GET | `/v1/sessions/{id}/stream` | `?since=N&token=T` | WebSocket |
//!
//! Session-scoped routes need the token from the create response, in the
//! `x-session-token` header or a `token` query parameter. Every response
//! carries `x-horizon-protocol`; requests that send a different version are
//! refused.

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::protocol::{
    CreateSessionRequest, EnvelopeBatch, ErrorBody, PostOfferRequest, PROTOCOL_HEADER, PROTOCOL_VERSION, TOKEN_HEADER,
};
use crate::service::{Service, ServiceError};

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(session_status))
        .route("/v1/sessions/{id}/offers", post(post_offer))
        .route("/v1/sessions/{id}/events", get(events))
        .route("/v1/sessions/{id}/stream", get(stream))
        .layer(middleware::from_fn(protocol_version))
        .with_state(service)
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn malformed(message: String) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                code: "malformed_request".into(),
                message,
                violations: Vec::new(),
            },
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let status = match e.code() {
            "unknown_session" => StatusCode::NOT_FOUND,
            "unauthorized" => StatusCode::UNAUTHORIZED,
            "phase_violation" => StatusCode::CONFLICT,
            "invalid_offer" | "invalid_timing" | "malformed_offer" => StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_config" | "agent_unavailable" => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self { status, body: e.body() }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::malformed(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn protocol_version(req: Request, next: Next) -> Response {
    let expected = PROTOCOL_VERSION.to_string();
    if let Some(sent) = req.headers().get(PROTOCOL_HEADER) {
        if sent.as_bytes() != expected.as_bytes() {
            let mut err = ApiError::malformed(format!(
                "unsupported protocol version {:?}, server speaks {expected}",
                String::from_utf8_lossy(sent.as_bytes())
            ));
            err.body.code = "unsupported_protocol".into();
            return with_version(err.into_response());
        }
    }
    with_version(next.run(req).await)
}

fn with_version(mut res: Response) -> Response {
    res.headers_mut().insert(
        PROTOCOL_HEADER,
        HeaderValue::from_str(&PROTOCOL_VERSION.to_string()).expect("ascii"),
    );
    res
}

#[derive(Debug, Default, Deserialize)]
struct SessionQuery {
    #[serde(default)]
    since: u64,
    #[serde(default)]
    token: Option<String>,
}

fn token(headers: &HeaderMap, query: &SessionQuery) -> String {
    headers
        .get(TOKEN_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_owned)
        .or_else(|| query.token.clone())
        .unwrap_or_default()
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                code: "internal".into(),
                message: e.to_string(),
                violations: Vec::new(),
            },
        }),
    }
}

async fn create_session(
    State(service): State<Service>,
    body: Result<Json<CreateSessionRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let created = blocking(move || service.create_session(req)).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn session_status(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<SessionQuery>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    Ok(Json(service.status(&id, &token(&headers, &query))?))
}

async fn post_offer(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<SessionQuery>,
    headers: HeaderMap,
    body: Result<Json<PostOfferRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(req) = body?;
    let token = token(&headers, &query);
    let envelopes = blocking(move || service.post_offer(&id, &token, req)).await?;
    Ok(Json(EnvelopeBatch { envelopes }))
}

async fn events(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<SessionQuery>,
    headers: HeaderMap,
) -> Result<impl IntoResponse, ApiError> {
    let envelopes = service.events_since(&id, &token(&headers, &query), query.since)?;
    Ok(Json(EnvelopeBatch { envelopes }))
}

async fn stream(
    State(service): State<Service>,
    Path(id): Path<String>,
    Query(query): Query<SessionQuery>,
    headers: HeaderMap,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let token = token(&headers, &query);
    // Authorize before upgrading so failures are plain HTTP errors.
    service.status(&id, &token)?;
    Ok(ws.on_upgrade(move |socket| pump(socket, service, id, token, query.since)))
}

/// Sends the backlog and then live envelopes; inbound text frames are
/// treated as `PostOfferRequest`s whose results arrive on the same stream.
async fn pump(mut socket: WebSocket, service: Service, id: String, token: String, since: u64) {
    let Ok((backlog, mut rx)) = service.subscribe(&id, &token, since) else {
        return;
    };
    let mut last = since;
    for envelope in backlog {
        last = envelope.seq;
        if send(&mut socket, &envelope).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            received = rx.recv() => match received {
                Ok(envelope) if envelope.seq <= last => {}
                Ok(envelope) => {
                    last = envelope.seq;
                    if send(&mut socket, &envelope).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(_)) => {
                    let Ok(missed) = service.events_since(&id, &token, last) else { return };
                    for envelope in missed {
                        last = envelope.seq;
                        if send(&mut socket, &envelope).await.is_err() {
                            return;
                        }
                    }
                }
                Err(RecvError::Closed) => return,
            },
            inbound = socket.recv() => match inbound {
                Some(Ok(Message::Text(text))) => {
                    match serde_json::from_str::<PostOfferRequest>(text.as_str()) {
                        Ok(req) => {
                            let (service, id, token) = (service.clone(), id.clone(), token.clone());
                            // Outcome and errors are both delivered as envelopes.
                            let _ = blocking(move || service.post_offer(&id, &token, req)).await;
                        }
                        Err(e) => {
                            let body = ErrorBody {
                                code: "malformed_request".into(),
                                message: e.to_string(),
                                violations: Vec::new(),
                            };
                            let text = serde_json::to_string(&body).expect("serializable");
                            if socket.send(Message::Text(text.into())).await.is_err() {
                                return;
                            }
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}

async fn send(socket: &mut WebSocket, envelope: &crate::protocol::Envelope) -> Result<(), axum::Error> {
    let text = serde_json::to_string(envelope).expect("envelopes serialize");
    socket.send(Message::Text(text.into())).await
}
