//! HTTP + WebSocket front end for live sessions.
//!
//! Routes:
//! - `GET /health` service status
//! - `GET /ws` one drawing session per socket, JSON text frames
//! - `GET /sessions/{id}/log` and `/sessions/{id}/grid` exports of a
//!   finished session

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use colorist_core::service::{
    ClientMessage, ErrorCode, LiveSession, ServerEnvelope, ServiceDefaults, SessionRegistry,
};

pub type SharedRegistry = Arc<SessionRegistry>;

/// Per-socket state: the session this connection drives, once started.
pub struct Connection {
    registry: SharedRegistry,
    live: Option<Arc<Mutex<LiveSession>>>,
}

impl Connection {
    pub fn new(registry: SharedRegistry) -> Self {
        Self { registry, live: None }
    }

    pub fn session_id(&self) -> Option<String> {
        self.live
            .as_ref()
            .map(|l| l.lock().unwrap_or_else(|p| p.into_inner()).id().to_string())
    }

    /// Handles one text frame and returns the frames to send back.
    pub fn on_text(&mut self, text: &str) -> Vec<String> {
        let envelopes = match serde_json::from_str::<ClientMessage>(text) {
            Err(e) => vec![self.error(ErrorCode::BadMessage, e.to_string())],
            Ok(ClientMessage::StartSession { config }) if self.live.is_none() => {
                match self.registry.start_session(&config) {
                    Ok((live, out)) => {
                        self.live = Some(live);
                        out
                    }
                    Err(e) => vec![ServerEnvelope::orphan_error(e.code, e.text)],
                }
            }
            Ok(message) => match &self.live {
                Some(live) => live.lock().unwrap_or_else(|p| p.into_inner()).handle(message),
                None => vec![ServerEnvelope::orphan_error(
                    ErrorCode::NoSession,
                    "send start_session first",
                )],
            },
        };
        envelopes
            .iter()
            .map(|e| serde_json::to_string(e).expect("envelopes serialize"))
            .collect()
    }

    fn error(&self, code: ErrorCode, text: String) -> ServerEnvelope {
        match &self.live {
            Some(live) => live
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .handle_error(code, text),
            None => ServerEnvelope::orphan_error(code, text),
        }
    }
}

pub fn router(registry: SharedRegistry) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/ws", get(ws_upgrade))
        .route("/sessions/{id}/log", get(export_log))
        .route("/sessions/{id}/grid", get(export_grid))
        .with_state(registry)
}

async fn health(State(registry): State<SharedRegistry>) -> Json<serde_json::Value> {
    let defaults = registry.defaults();
    Json(serde_json::json!({
        "status": "ok",
        "sessions": registry.len(),
        "dwell_ms": defaults.dwell_ms,
        "epsilon": defaults.epsilon,
    }))
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(registry): State<SharedRegistry>) -> Response {
    ws.on_upgrade(move |socket| drive(socket, registry))
}

async fn drive(mut socket: WebSocket, registry: SharedRegistry) {
    let mut conn = Connection::new(registry);
    while let Some(frame) = socket.recv().await {
        let text = match frame {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        for reply in conn.on_text(text.as_str()) {
            if socket.send(Message::Text(reply.into())).await.is_err() {
                // client went away; the session stays frozen in the registry
                return;
            }
        }
    }
    if let Some(id) = conn.session_id() {
        tracing::info!(session = %id, "connection closed");
    }
}

fn export(registry: &SessionRegistry, id: &str, pick_log: bool) -> Response {
    match registry.export(id) {
        Ok((log, grid)) => {
            let (body, mime) = if pick_log {
                (log, "application/x-ndjson")
            } else {
                (grid, "text/csv")
            };
            ([(axum::http::header::CONTENT_TYPE, mime)], body).into_response()
        }
        Err(e) => {
            let status = match e.code {
                ErrorCode::NoSession => StatusCode::NOT_FOUND,
                _ => StatusCode::CONFLICT,
            };
            (status, e.text).into_response()
        }
    }
}

async fn export_log(State(registry): State<SharedRegistry>, Path(id): Path<String>) -> Response {
    export(&registry, &id, true)
}

async fn export_grid(State(registry): State<SharedRegistry>, Path(id): Path<String>) -> Response {
    export(&registry, &id, false)
}

pub async fn serve(port: u16, defaults: ServiceDefaults) -> anyhow::Result<()> {
    let registry = Arc::new(SessionRegistry::new(defaults));
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(registry))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
