#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use cryptolab_core::channel::EventTrace;
use cryptolab_core::coach::CoachContent;
use cryptolab_core::entropy::Entropy;
use cryptolab_core::lessons::ContentPack;
use cryptolab_core::scenario::ModuleId;

/// How the stub chat endpoint behaves.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    /// Six statements, no question: over any sane cap.
    Chatty,
    Fail,
    /// Sleeps longer than the client timeout.
    Slow(Duration),
}

#[derive(Clone)]
struct Stub {
    mode: Mode,
    hits: Arc<AtomicUsize>,
    auth: Arc<Mutex<Vec<String>>>,
}

pub struct ChatStub {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub auth: Arc<Mutex<Vec<String>>>,
    _rt: tokio::runtime::Runtime,
}

const CHATTY: &str = "You saw the text change on the way. The hash did not stop it. \
The attacker made a new hash too. So the check passed. That is the problem. Think about what the portal knows.";

async fn complete(State(s): State<Stub>, headers: HeaderMap, Json(_req): Json<serde_json::Value>) -> (StatusCode, Json<serde_json::Value>) {
    s.hits.fetch_add(1, Ordering::SeqCst);
    if let Some(v) = headers.get("authorization").and_then(|v| v.to_str().ok()) {
        s.auth.lock().unwrap().push(v.to_owned());
    }
    match s.mode {
        Mode::Chatty => (
            StatusCode::OK,
            Json(serde_json::json!({"choices": [{"message": {"role": "assistant", "content": CHATTY}}]})),
        ),
        Mode::Fail => (StatusCode::INTERNAL_SERVER_ERROR, Json(serde_json::json!({"error": "down"}))),
        Mode::Slow(d) => {
            tokio::time::sleep(d).await;
            (StatusCode::OK, Json(serde_json::json!({"choices": [{"message": {"role": "assistant", "content": "late?"}}]})))
        }
    }
}

impl ChatStub {
    pub fn start(mode: Mode) -> Self {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(1).enable_all().build().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let auth = Arc::new(Mutex::new(Vec::new()));
        let stub = Stub {
            mode,
            hits: hits.clone(),
            auth: auth.clone(),
        };
        let addr: SocketAddr = rt.block_on(async {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let addr = listener.local_addr().unwrap();
            let app = Router::new().route("/v1/chat/completions", post(complete)).with_state(stub);
            tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
            addr
        });
        ChatStub {
            url: format!("http://{addr}/v1/chat/completions"),
            hits,
            auth,
            _rt: rt,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// The bundled coach content and an attacked trace for `m`.
pub fn coach_setup(m: ModuleId) -> (CoachContent, EventTrace) {
    let pack = ContentPack::builtin();
    let module = pack.module(m).unwrap();
    let run = pack
        .lab()
        .run_experience(m, true, &module.default_input, &Entropy::seeded(11))
        .unwrap();
    (module.coach.clone(), run.trace)
}
