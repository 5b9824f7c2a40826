//! Typed async client for the cryptolab HTTP service.

use cryptolab_core::api::*;
use cryptolab_core::channel::{Outcome, TraceEvent};
use cryptolab_core::coach::Conversation;
use cryptolab_core::lessons::{LessonProgress, SurveyPhase, TTest};
use cryptolab_core::scenario::{ModuleId, StudentInput};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Http(#[from] reqwest::Error),
    #[error("{status} {code}: {message}")]
    Api {
        status: StatusCode,
        code: String,
        message: String,
    },
    #[error("unexpected response: {0}")]
    Decode(String),
    #[error("not logged in")]
    NoToken,
}

impl ClientError {
    /// The service's error code, if the service answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { code, .. } => Some(code),
            _ => None,
        }
    }

    pub fn status(&self) -> Option<StatusCode> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// One item from a trace stream.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StreamItem {
    Event(TraceEvent),
    Outcome(Outcome),
}

#[derive(Clone, Debug)]
pub struct Client {
    base: String,
    http: reqwest::Client,
    token: Option<String>,
}

impl Client {
    pub fn new(base: impl Into<String>) -> Self {
        Client {
            base: base.into().trim_end_matches('/').to_owned(),
            http: reqwest::Client::new(),
            token: None,
        }
    }

    pub fn with_token(mut self, token: impl Into<String>) -> Self {
        self.token = Some(token.into());
        self
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    async fn send<T: DeserializeOwned>(
        &self,
        method: Method,
        path: &str,
        body: Option<serde_json::Value>,
        idempotency_key: Option<&str>,
    ) -> Result<T, ClientError> {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        if let Some(k) = idempotency_key {
            req = req.header(IDEMPOTENCY_HEADER, k);
        }
        if let Some(b) = body {
            req = req.json(&b);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<Body<ErrorBody>>(&bytes) {
                Ok(e) => ClientError::Api {
                    status,
                    code: e.data.code,
                    message: e.data.message,
                },
                Err(_) => ClientError::Api {
                    status,
                    code: "unknown".into(),
                    message: String::from_utf8_lossy(&bytes).into_owned(),
                },
            });
        }
        let body: Body<T> = serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))?;
        if body.v != API_VERSION {
            return Err(ClientError::Decode(format!("unsupported version v{}", body.v)));
        }
        Ok(body.data)
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        self.send(Method::GET, path, None, None).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: B) -> Result<T, ClientError> {
        self.post_idem(path, body, None).await
    }

    /// POST with an `Idempotency-Key`; retrying with the same key returns
    /// the first response instead of repeating the action.
    pub async fn post_idem<B: Serialize, T: DeserializeOwned>(
        &self,
        path: &str,
        body: B,
        key: Option<&str>,
    ) -> Result<T, ClientError> {
        let json = serde_json::to_value(Body::new(body)).map_err(|e| ClientError::Decode(e.to_string()))?;
        self.send(Method::POST, path, Some(json), key).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("/healthz").await
    }

    /// Logs in and keeps the token for later calls.
    pub async fn login(&mut self, username: &str, password: &str) -> Result<LoginResponse, ClientError> {
        let r: LoginResponse = self
            .post(
                "/login",
                LoginRequest {
                    username: username.into(),
                    password: password.into(),
                },
            )
            .await?;
        self.token = Some(r.token.clone());
        Ok(r)
    }

    pub async fn modules(&self) -> Result<ModulesResponse, ClientError> {
        self.get("/modules").await
    }

    pub async fn experience(
        &self,
        module: ModuleId,
        attacked: bool,
        input: Option<StudentInput>,
    ) -> Result<RunResponse, ClientError> {
        self.post("/experience/run", ExperienceRequest { module, attacked, input }).await
    }

    pub async fn scenario(&self, req: ScenarioRequest) -> Result<ScenarioResponse, ClientError> {
        self.post("/scenario/run", req).await
    }

    pub async fn terminal_open(&self, module: ModuleId, input: Option<StudentInput>) -> Result<TerminalView, ClientError> {
        self.post("/terminal/open", TerminalOpenRequest { module, input }).await
    }

    pub async fn terminal_exec(&self, session_id: &str, line: &str) -> Result<TerminalExecResponse, ClientError> {
        self.post(
            "/terminal/exec",
            TerminalExecRequest {
                session_id: session_id.into(),
                line: line.into(),
            },
        )
        .await
    }

    pub async fn terminal(&self, session_id: &str) -> Result<TerminalView, ClientError> {
        self.get(&format!("/terminal/{session_id}")).await
    }

    pub async fn coach_start(&self, module: ModuleId, trace_id: Option<String>) -> Result<CoachStartResponse, ClientError> {
        self.post("/coach/start", CoachStartRequest { module, trace_id }).await
    }

    pub async fn coach_reply(&self, session_id: &str, text: &str) -> Result<CoachReplyResponse, ClientError> {
        self.post(
            "/coach/reply",
            CoachReplyRequest {
                session_id: session_id.into(),
                text: text.into(),
            },
        )
        .await
    }

    pub async fn coach(&self, session_id: &str) -> Result<Conversation, ClientError> {
        self.get(&format!("/coach/{session_id}")).await
    }

    pub async fn quiz(&self, module: ModuleId) -> Result<QuizView, ClientError> {
        self.get(&format!("/quiz/{module}")).await
    }

    pub async fn quiz_submit(&self, module: ModuleId, answers: Vec<usize>) -> Result<QuizSubmitResponse, ClientError> {
        self.post("/quiz/submit", QuizSubmitRequest { module, answers }).await
    }

    pub async fn survey(&self, module: ModuleId, phase: SurveyPhase, answers: Vec<u8>) -> Result<LessonProgress, ClientError> {
        self.post("/survey", SurveyRequest { module, phase, answers }).await
    }

    pub async fn progress(&self) -> Result<ProgressResponse, ClientError> {
        self.get("/progress").await
    }

    pub async fn trace(&self, trace_id: &str) -> Result<TraceRecord, ClientError> {
        self.get(&format!("/trace/{trace_id}")).await
    }

    pub async fn paired_t(&self, pre: Vec<f64>, post: Vec<f64>) -> Result<TTest, ClientError> {
        self.post("/analytics/paired-t", PairedTRequest { pre, post }).await
    }

    /// Replays a trace over the event stream and collects every item.
    pub async fn stream_trace(&self, trace_id: &str, interval_ms: Option<u64>) -> Result<Vec<StreamItem>, ClientError> {
        let token = self.token.as_deref().ok_or(ClientError::NoToken)?;
        let mut req = self
            .http
            .get(format!("{}/trace/{trace_id}/stream", self.base))
            .bearer_auth(token);
        if let Some(ms) = interval_ms {
            req = req.query(&[("interval_ms", ms)]);
        }
        let resp = req.send().await?;
        let status = resp.status();
        let text = resp.text().await?;
        if !status.is_success() {
            let e: Body<ErrorBody> = serde_json::from_str(&text).map_err(|e| ClientError::Decode(e.to_string()))?;
            return Err(ClientError::Api {
                status,
                code: e.data.code,
                message: e.data.message,
            });
        }
        parse_sse(&text)
    }
}

/// Parses a complete `text/event-stream` body from the trace stream.
pub fn parse_sse(text: &str) -> Result<Vec<StreamItem>, ClientError> {
    let mut out = Vec::new();
    for block in text.replace("\r\n", "\n").split("\n\n") {
        let mut event = "message";
        let mut data = String::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                event = v.trim_start();
            } else if let Some(v) = line.strip_prefix("data:") {
                if !data.is_empty() {
                    data.push('\n');
                }
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if data.is_empty() {
            continue;
        }
        let decode = |e: serde_json::Error| ClientError::Decode(e.to_string());
        match event {
            SSE_EVENT => out.push(StreamItem::Event(serde_json::from_str::<StreamEvent>(&data).map_err(decode)?.data)),
            SSE_OUTCOME => out.push(StreamItem::Outcome(
                serde_json::from_str::<Body<StreamOutcome>>(&data).map_err(decode)?.data.outcome,
            )),
            _ => {}
        }
    }
    Ok(out)
}
