//! Reference stub server for the `/generate` wire protocol.
//!
//! Behavior, in order:
//! - `echo:X`  -> completes with `X`
//! - `failN:X` -> returns 500 for the first N requests of this exact prompt,
//!   then completes with `X` (exercises the client retry policy)
//! - otherwise the optional completion table is consulted; a miss is a 404.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::client::MockTable;

#[derive(Clone)]
struct StubState {
    table: Option<Arc<MockTable>>,
    fail_counts: Arc<Mutex<HashMap<String, u32>>>,
}

#[derive(Deserialize)]
struct StubRequest {
    prompt: String,
    #[allow(dead_code)]
    max_tokens: Option<u32>,
    #[allow(dead_code)]
    stop: Option<Vec<String>>,
}

#[derive(Serialize)]
struct StubResponse {
    text: String,
}

async fn healthz() -> &'static str {
    "ok"
}

async fn generate(
    State(state): State<StubState>,
    Json(request): Json<StubRequest>,
) -> Result<Json<StubResponse>, (StatusCode, String)> {
    let prompt = request.prompt;
    if let Some(rest) = prompt.strip_prefix("echo:") {
        return Ok(Json(StubResponse { text: rest.to_string() }));
    }
    if let Some((spec, rest)) = parse_fail_prefix(&prompt) {
        let mut counts = state.fail_counts.lock().expect("stub lock");
        let seen = counts.entry(prompt.clone()).or_insert(0);
        if *seen < spec {
            *seen += 1;
            return Err((StatusCode::INTERNAL_SERVER_ERROR, "induced failure".into()));
        }
        return Ok(Json(StubResponse { text: rest }));
    }
    if let Some(table) = &state.table {
        return match table.lookup(&prompt) {
            Ok(text) => Ok(Json(StubResponse { text })),
            Err(e) => Err((StatusCode::NOT_FOUND, e.to_string())),
        };
    }
    Err((StatusCode::NOT_FOUND, "no completion table loaded".into()))
}

fn parse_fail_prefix(prompt: &str) -> Option<(u32, String)> {
    let rest = prompt.strip_prefix("fail")?;
    let colon = rest.find(':')?;
    let n: u32 = rest[..colon].parse().ok()?;
    Some((n, rest[colon + 1..].to_string()))
}

pub fn router(table: Option<MockTable>) -> Router {
    let state = StubState {
        table: table.map(Arc::new),
        fail_counts: Arc::new(Mutex::new(HashMap::new())),
    };
    Router::new()
        .route("/generate", post(generate))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serve until the process exits.
pub async fn serve(listener: tokio::net::TcpListener, table: Option<MockTable>) -> std::io::Result<()> {
    axum::serve(listener, router(table)).await
}

/// Start a stub on an ephemeral port in a background thread with its own
/// runtime; returns the bound address. The server lives for the rest of the
/// process, which is fine for tests.
pub fn spawn_for_tests(table: Option<MockTable>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let runtime = tokio::runtime::Builder::new_current_thread()
            .enable_all()
            .build()
            .expect("stub runtime");
        runtime.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0")
                .await
                .expect("stub bind");
            tx.send(listener.local_addr().expect("stub addr")).expect("stub send");
            serve(listener, table).await.expect("stub serve");
        });
    });
    rx.recv().expect("stub address")
}
