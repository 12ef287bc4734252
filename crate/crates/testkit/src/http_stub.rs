//! A local completion service that records what it receives.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;

pub type Responder = dyn Fn(&str) -> String + Send + Sync;

pub enum Reply {
    /// `{"text": responder(prompt)}` with status 200.
    Text(Box<Responder>),
    /// Fixed status and body.
    Raw(u16, String),
}

pub struct Stub {
    pub base_url: String,
    pub state: Arc<StubState>,
}

pub struct StubState {
    reply: Reply,
    max_delay_ms: u64,
    /// Raw request bodies in arrival order.
    pub bodies: Mutex<Vec<Vec<u8>>>,
    pub in_flight: AtomicUsize,
    pub peak_in_flight: AtomicUsize,
    pub hits: AtomicUsize,
}

impl StubState {
    pub fn requests(&self) -> Vec<serde_json::Value> {
        self.bodies
            .lock()
            .unwrap()
            .iter()
            .map(|b| serde_json::from_slice(b).expect("client sent JSON"))
            .collect()
    }
}

async fn handle(State(state): State<Arc<StubState>>, body: Bytes) -> (StatusCode, String) {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let now = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.peak_in_flight.fetch_max(now, Ordering::SeqCst);
    state.bodies.lock().unwrap().push(body.to_vec());

    // Pseudo-random but reproducible latency per request body.
    if state.max_delay_ms > 0 {
        let mut h = DefaultHasher::new();
        body.hash(&mut h);
        tokio::time::sleep(Duration::from_millis(h.finish() % (state.max_delay_ms + 1))).await;
    }
    let out = match &state.reply {
        Reply::Raw(status, text) => (StatusCode::from_u16(*status).unwrap(), text.clone()),
        Reply::Text(f) => {
            let json: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
            let prompt = json["prompt"].as_str().unwrap_or_default();
            (StatusCode::OK, serde_json::json!({ "text": f(prompt) }).to_string())
        }
    };
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
    out
}

/// Serves `POST /v1/completions` on an ephemeral local port.
pub async fn spawn(reply: Reply, max_delay_ms: u64) -> Stub {
    let state = Arc::new(StubState {
        reply,
        max_delay_ms,
        bodies: Mutex::new(Vec::new()),
        in_flight: AtomicUsize::new(0),
        peak_in_flight: AtomicUsize::new(0),
        hits: AtomicUsize::new(0),
    });
    let app = Router::new()
        .route("/v1/completions", post(handle))
        .with_state(state.clone());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base_url = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    Stub { base_url, state }
}
