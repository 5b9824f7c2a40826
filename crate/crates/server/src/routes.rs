use std::convert::Infallible;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cryptolab_core::api::*;
use cryptolab_core::coach::Conversation;
use cryptolab_core::lessons::{paired_t_test, score_quiz, PairedSample, PublicQuestion, Stage};
use cryptolab_core::scenario::{Classification, ModuleId, StudentInput};
use cryptolab_core::terminal::TerminalSession;
use futures::StreamExt;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::state::{new_id, now_ms, AppState, ExperienceRuns, IdemEntry, StudentState};

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/login", post(login))
        .route("/modules", get(modules))
        .route("/experience/run", post(experience_run))
        .route("/scenario/run", post(scenario_run))
        .route("/terminal/open", post(terminal_open))
        .route("/terminal/exec", post(terminal_exec))
        .route("/terminal/{id}", get(terminal_get))
        .route("/coach/start", post(coach_start))
        .route("/coach/reply", post(coach_reply))
        .route("/coach/{id}", get(coach_get))
        .route("/quiz/{module}", get(quiz_get))
        .route("/quiz/submit", post(quiz_submit))
        .route("/survey", post(survey))
        .route("/progress", get(progress))
        .route("/trace/{id}", get(trace_get))
        .route("/trace/{id}/stream", get(trace_stream))
        .route("/analytics/paired-t", post(paired_t))
        .fallback(|| async { ApiError::not_found("route") })
        .with_state(state)
}

/// The authenticated student, from `Authorization: Bearer` or a `token`
/// query parameter (for browser event streams, which cannot set headers).
pub struct Auth(pub String);

impl FromRequestParts<AppState> for Auth {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, app: &AppState) -> Result<Self, ApiError> {
        let header = parts
            .headers
            .get(axum::http::header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::to_owned);
        let query = || {
            parts.uri.query().and_then(|q| {
                q.split('&')
                    .find_map(|kv| kv.strip_prefix("token="))
                    .map(str::to_owned)
            })
        };
        let token = header.or_else(query).ok_or_else(ApiError::unauthorized)?;
        app.check_token(token.trim()).map(Auth).ok_or_else(ApiError::unauthorized)
    }
}

/// A JSON request body with a supported `v`.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let Json(body) = Json::<Body<T>>::from_request(req, state)
            .await
            .map_err(|e: JsonRejection| ApiError::new(StatusCode::BAD_REQUEST, "invalid_json", e.body_text()))?;
        if body.v != API_VERSION {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                "unsupported_version",
                format!("this server speaks v{API_VERSION}, got v{}", body.v),
            ));
        }
        Ok(ApiJson(body.data))
    }
}

fn ok<T: Serialize>(data: T) -> Response {
    Json(Body::new(data)).into_response()
}

/// Retry protection for a mutating request.
struct Idem {
    key: Option<String>,
    fingerprint: String,
}

impl Idem {
    fn new<T: Serialize>(headers: &HeaderMap, route: &str, req: &T) -> Self {
        let key = headers
            .get(IDEMPOTENCY_HEADER)
            .and_then(|v| v.to_str().ok())
            .map(|s| s.trim().to_owned())
            .filter(|s| !s.is_empty());
        let mut h = Sha256::new();
        h.update(route.as_bytes());
        h.update(serde_json::to_vec(req).expect("requests serialize"));
        Idem {
            key,
            fingerprint: hex::encode(h.finalize()),
        }
    }

    /// The stored response for a repeated key, or an error if the key was
    /// used for a different request.
    fn replay(&self, st: &StudentState) -> Result<Option<Response>, ApiError> {
        let Some(entry) = self.key.as_ref().and_then(|k| st.idempotency.get(k)) else {
            return Ok(None);
        };
        if entry.fingerprint != self.fingerprint {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_conflict",
                "this idempotency key was already used for a different request",
            ));
        }
        let status = StatusCode::from_u16(entry.status).unwrap_or(StatusCode::OK);
        Ok(Some((status, Json(entry.body.clone())).into_response()))
    }

    fn finish<T: Serialize>(self, app: &AppState, st: &mut StudentState, result: Result<T, ApiError>) -> Response {
        let (status, body) = match result {
            Ok(data) => (StatusCode::OK, serde_json::to_value(Body::new(data)).expect("responses serialize")),
            Err(e) => (e.status, serde_json::to_value(e.body()).expect("errors serialize")),
        };
        if let Some(key) = self.key {
            if !status.is_server_error() {
                let entry = IdemEntry {
                    fingerprint: self.fingerprint,
                    status: status.as_u16(),
                    body: body.clone(),
                };
                if let Err(e) = st.save_idempotency(&app.store, &key, entry) {
                    return e.into_response();
                }
            }
        }
        (status, Json(body)).into_response()
    }
}

/// Runs a mutating handler body under the student's lock with retry
/// protection.
macro_rules! mutate {
    ($app:expr, $student:expr, $headers:expr, $route:expr, $req:expr, |$st:ident| $body:expr) => {{
        let idem = Idem::new(&$headers, $route, &$req);
        let handle = $app.student(&$student)?;
        let mut guard = handle.lock().await;
        if let Some(resp) = idem.replay(&guard)? {
            return Ok(resp);
        }
        let $st: &mut StudentState = &mut guard;
        let result = $body;
        Ok::<Response, ApiError>(idem.finish(&$app, $st, result))
    }};
}

async fn healthz() -> Response {
    ok(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

async fn login(State(app): State<AppState>, ApiJson(req): ApiJson<LoginRequest>) -> Result<Response, ApiError> {
    let app2 = app.clone();
    let account = tokio::task::spawn_blocking(move || {
        app2.accounts
            .authenticate(&req.username, &req.password)
            .map(|a| StudentInfo {
                username: a.username.clone(),
                display_name: a.display_name.clone(),
                cohort: a.cohort.clone(),
            })
    })
    .await?
    .ok_or_else(ApiError::auth_failed)?;
    let (token, expires_at) = app.create_session(&account.username)?;
    tracing::info!(student = %account.username, "login");
    Ok(ok(LoginResponse {
        token,
        expires_at,
        student: account,
    }))
}

fn module_pack(app: &AppState, m: ModuleId) -> Result<&cryptolab_core::lessons::ModulePack, ApiError> {
    app.pack.module(m).ok_or_else(|| ApiError::not_found("module"))
}

fn input_or_default(app: &AppState, m: ModuleId, input: Option<StudentInput>) -> Result<StudentInput, ApiError> {
    match input {
        Some(i) => Ok(i),
        None => Ok(module_pack(app, m)?.default_input.clone()),
    }
}

async fn modules(State(app): State<AppState>, Auth(student): Auth) -> Result<Response, ApiError> {
    let handle = app.student(&student)?;
    let st = handle.lock().await;
    let modules = app
        .pack
        .modules
        .iter()
        .map(|m| ModuleSummary {
            id: m.id,
            title: m.title.clone(),
            story: m.story.clone(),
            stages: m.stages.clone(),
            videos: m.videos.clone(),
            options: m.options.clone(),
            default_input: m.default_input.clone(),
            status: st.status(m.id),
        })
        .collect();
    Ok(ok(ModulesResponse { modules }))
}

async fn experience_run(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<ExperienceRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "experience/run", req, |st| {
        run_experience(&app, st, req.clone()).await
    })
}

async fn run_experience(app: &AppState, st: &mut StudentState, req: ExperienceRequest) -> Result<RunResponse, ApiError> {
    let m = req.module;
    let input = input_or_default(app, m, req.input)?;
    let entropy = st.next_entropy(&app.store)?;
    let app2 = app.clone();
    let run = tokio::task::spawn_blocking(move || app2.lab.run_experience(m, req.attacked, &input, &entropy)).await??;
    let trace_id = new_id("tr");
    st.save_trace(
        &app.store,
        TraceRecord {
            trace_id: trace_id.clone(),
            module: m,
            source: TraceSource::Experience,
            attacked: Some(req.attacked),
            option: None,
            trace: run.trace.clone(),
        },
    )?;
    let mut runs = st.experience.get(&m).cloned().unwrap_or_else(ExperienceRuns::default);
    if req.attacked {
        runs.attacked = Some(trace_id.clone());
    } else {
        runs.ideal = Some(trace_id.clone());
    }
    let both = runs.ideal.is_some() && runs.attacked.is_some();
    st.save_experience(&app.store, m, runs)?;
    if both {
        st.advance(&app.store, m, Stage::Experience)?;
    }
    Ok(RunResponse {
        trace_id,
        trace: run.trace,
        status: st.status(m),
    })
}

async fn scenario_run(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<ScenarioRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "scenario/run", req, |st| {
        run_scenario(&app, st, req.clone()).await
    })
}

async fn run_scenario(app: &AppState, st: &mut StudentState, req: ScenarioRequest) -> Result<ScenarioResponse, ApiError> {
    let m = req.module;
    st.may_enter(m, Stage::Conceptualization)?;
    let input = input_or_default(app, m, req.input)?;
    let explanation = module_pack(app, m)?
        .options
        .iter()
        .find(|o| o.option == req.option)
        .map(|o| o.explanation.clone());
    let entropy = st.next_entropy(&app.store)?;
    let app2 = app.clone();
    let (run, verdict) = tokio::task::spawn_blocking(move || {
        let spec = app2.lab.spec(m, req.option, req.attacked);
        app2.lab.run_option(&spec, &input, &entropy)
    })
    .await??;
    let trace_id = new_id("tr");
    st.save_trace(
        &app.store,
        TraceRecord {
            trace_id: trace_id.clone(),
            module: m,
            source: TraceSource::Scenario,
            attacked: Some(req.attacked),
            option: Some(req.option),
            trace: run.trace.clone(),
        },
    )?;
    if verdict.classification == Classification::Secure {
        st.advance(&app.store, m, Stage::Conceptualization)?;
    }
    Ok(ScenarioResponse {
        trace_id,
        trace: run.trace,
        verdict,
        explanation,
        status: st.status(m),
    })
}

fn terminal_view(id: &str, s: &TerminalSession) -> TerminalView {
    TerminalView {
        session_id: id.to_owned(),
        module: s.module(),
        help: s.help(),
        completed: s.completed().to_vec(),
        complete: s.is_complete(),
        transcript: s.transcript().to_vec(),
    }
}

async fn terminal_open(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<TerminalOpenRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "terminal/open", req, |st| {
        (|| {
            let m = req.module;
            st.may_enter(m, Stage::Experimentation)?;
            let input = input_or_default(&app, m, req.input.clone())?;
            let entropy = st.next_entropy(&app.store)?;
            let session = TerminalSession::new(m, input, entropy)?;
            let id = new_id("term");
            let view = terminal_view(&id, &session);
            st.save_terminal(&app.store, &id, session)?;
            Ok::<_, ApiError>(view)
        })()
    })
}

async fn terminal_get(
    State(app): State<AppState>,
    Auth(student): Auth,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = app.student(&student)?;
    let st = handle.lock().await;
    let s = st.terminals.get(&id).ok_or_else(|| ApiError::not_found("terminal session"))?;
    Ok(ok(terminal_view(&id, s)))
}

async fn terminal_exec(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<TerminalExecRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "terminal/exec", req, |st| {
        exec_terminal(&app, st, req.clone()).await
    })
}

async fn exec_terminal(
    app: &AppState,
    st: &mut StudentState,
    req: TerminalExecRequest,
) -> Result<TerminalExecResponse, ApiError> {
    let mut session = st
        .terminals
        .get(&req.session_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("terminal session"))?;
    let m = session.module();
    let (session, feedback) = tokio::task::spawn_blocking(move || {
        let fb = session.submit(&req.line);
        (session, fb)
    })
    .await?;
    let trace_id = match &feedback.trace {
        Some(trace) => {
            let id = new_id("tr");
            st.save_trace(
                &app.store,
                TraceRecord {
                    trace_id: id.clone(),
                    module: m,
                    source: TraceSource::Terminal,
                    attacked: None,
                    option: None,
                    trace: trace.clone(),
                },
            )?;
            Some(id)
        }
        None => None,
    };
    let complete = session.is_complete();
    st.save_terminal(&app.store, &req.session_id, session)?;
    if complete {
        st.advance(&app.store, m, Stage::Experimentation)?;
    }
    Ok(TerminalExecResponse {
        feedback,
        trace_id,
        complete,
        status: st.status(m),
    })
}

async fn coach_start(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<CoachStartRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "coach/start", req, |st| {
        (|| {
            let m = req.module;
            st.may_enter(m, Stage::Reflection)?;
            let trace_id = match &req.trace_id {
                Some(id) => id.clone(),
                None => st
                    .experience
                    .get(&m)
                    .and_then(|r| r.attacked.clone())
                    .ok_or_else(|| ApiError::bad_request("run the attacked experience first"))?,
            };
            let record = st.traces.get(&trace_id).ok_or_else(|| ApiError::not_found("trace"))?;
            if record.module != m || record.source != TraceSource::Experience || record.attacked != Some(true) {
                return Err(ApiError::bad_request("the coach needs an attacked experience trace from this module"));
            }
            let content = &module_pack(&app, m)?.coach;
            let conv = Conversation::start(new_id("coach"), m, content, &record.trace, now_ms())?;
            let resp = CoachStartResponse {
                session_id: conv.id.clone(),
                coach_text: conv.turns[0].text.clone(),
                conversation: conv.clone(),
            };
            st.save_conversation(&app.store, conv)?;
            Ok(resp)
        })()
    })
}

async fn coach_get(
    State(app): State<AppState>,
    Auth(student): Auth,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = app.student(&student)?;
    let st = handle.lock().await;
    let c = st.conversations.get(&id).ok_or_else(|| ApiError::not_found("conversation"))?;
    Ok(ok(c.clone()))
}

async fn coach_reply(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<CoachReplyRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "coach/reply", req, |st| {
        reply_coach(&app, st, req.clone()).await
    })
}

async fn reply_coach(app: &AppState, st: &mut StudentState, req: CoachReplyRequest) -> Result<CoachReplyResponse, ApiError> {
    let mut conv = st
        .conversations
        .get(&req.session_id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("conversation"))?;
    let m = conv.module;
    let content = module_pack(app, m)?.coach.clone();
    let provider = app.provider.clone();
    let (conv, turn) = tokio::task::spawn_blocking(move || {
        let turn = conv.reply(&content, provider.as_deref(), &req.text, now_ms()).cloned();
        (conv, turn)
    })
    .await?;
    let turn = turn?;
    let closed = conv.is_closed();
    st.save_conversation(&app.store, conv)?;
    if closed {
        st.advance(&app.store, m, Stage::Reflection)?;
    }
    Ok(CoachReplyResponse {
        coach_text: turn.text,
        source: turn.source.unwrap_or(cryptolab_core::coach::ReplySource::Fallback),
        closed,
        status: st.status(m),
    })
}

fn parse_module(s: &str) -> Result<ModuleId, ApiError> {
    s.parse().map_err(|_| ApiError::not_found("module"))
}

async fn quiz_get(
    State(app): State<AppState>,
    Auth(_): Auth,
    Path(module): Path<String>,
) -> Result<Response, ApiError> {
    let m = parse_module(&module)?;
    let questions = module_pack(&app, m)?.quiz.iter().map(PublicQuestion::from).collect();
    Ok(ok(QuizView { module: m, questions }))
}

async fn quiz_submit(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<QuizSubmitRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "quiz/submit", req, |st| {
        (|| {
            let m = req.module;
            st.may_enter(m, Stage::Quiz)?;
            let result = score_quiz(&req.answers, &module_pack(&app, m)?.quiz)?;
            let mut p = st.progress(m);
            p.advance(Stage::Quiz)?;
            p.quiz_result = Some(result.clone());
            st.save_progress(&app.store, p)?;
            Ok::<_, ApiError>(QuizSubmitResponse {
                result,
                status: st.status(m),
            })
        })()
    })
}

async fn survey(
    State(app): State<AppState>,
    Auth(student): Auth,
    headers: HeaderMap,
    ApiJson(req): ApiJson<SurveyRequest>,
) -> Result<Response, ApiError> {
    mutate!(app, student, headers, "survey", req, |st| {
        (|| {
            let mut p = st.progress(req.module);
            p.record_survey(req.phase, req.answers.clone())?;
            st.save_progress(&app.store, p.clone())?;
            Ok::<_, ApiError>(p)
        })()
    })
}

async fn progress(State(app): State<AppState>, Auth(student): Auth) -> Result<Response, ApiError> {
    let handle = app.student(&student)?;
    let st = handle.lock().await;
    Ok(ok(ProgressResponse {
        student: student.clone(),
        modules: ModuleId::ALL.into_iter().map(|m| st.progress(m)).collect(),
    }))
}

async fn trace_get(
    State(app): State<AppState>,
    Auth(student): Auth,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let handle = app.student(&student)?;
    let st = handle.lock().await;
    let r = st.traces.get(&id).ok_or_else(|| ApiError::not_found("trace"))?;
    Ok(ok(r.clone()))
}

#[derive(Deserialize)]
struct StreamParams {
    /// Playback speed; 2 halves the gap between events.
    speed: Option<f64>,
    /// Exact gap in milliseconds, overriding `speed`.
    interval_ms: Option<u64>,
}

pub const MIN_SPEED: f64 = 0.1;
pub const MAX_SPEED: f64 = 10.0;

async fn trace_stream(
    State(app): State<AppState>,
    Auth(student): Auth,
    Path(id): Path<String>,
    Query(params): Query<StreamParams>,
) -> Result<Response, ApiError> {
    let record = {
        let handle = app.student(&student)?;
        let st = handle.lock().await;
        st.traces.get(&id).cloned().ok_or_else(|| ApiError::not_found("trace"))?
    };
    let gap = match (params.interval_ms, params.speed) {
        (Some(ms), _) => Duration::from_millis(ms),
        (None, Some(s)) if (MIN_SPEED..=MAX_SPEED).contains(&s) => app.stream_interval.div_f64(s),
        (None, Some(s)) => {
            return Err(ApiError::bad_request(format!(
                "speed must be between {MIN_SPEED} and {MAX_SPEED}, got {s}"
            )))
        }
        (None, None) => app.stream_interval,
    };
    let outcome = Event::default()
        .event(SSE_OUTCOME)
        .json_data(Body::new(StreamOutcome {
            outcome: record.trace.outcome,
        }))
        .map_err(ApiError::internal)?;
    let mut events = Vec::with_capacity(record.trace.events.len() + 1);
    for ev in &record.trace.events {
        events.push(
            Event::default()
                .event(SSE_EVENT)
                .id(ev.seq.to_string())
                .json_data(Body::new(ev.clone()))
                .map_err(ApiError::internal)?,
        );
    }
    events.push(outcome);
    let stream = futures::stream::iter(events.into_iter().enumerate()).then(move |(i, ev)| async move {
        if i > 0 && !gap.is_zero() {
            tokio::time::sleep(gap).await;
        }
        Ok::<_, Infallible>(ev)
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()).into_response())
}

async fn paired_t(Auth(_): Auth, ApiJson(req): ApiJson<PairedTRequest>) -> Result<Response, ApiError> {
    let sample = PairedSample::new(req.pre, req.post)?;
    Ok(ok(paired_t_test(&sample)?))
}
