//! Request and response bodies for the HTTP service. Every body carries a
//! schema version `v` next to its fields.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::channel::{EventTrace, Outcome, TraceEvent};
use crate::coach::{Conversation, ReplySource};
use crate::lessons::pack::{OptionText, Video};
use crate::lessons::progress::{LessonProgress, Stage, SurveyPhase};
use crate::lessons::quiz::{PublicQuestion, QuizResult};
use crate::lessons::stats::TTest;
use crate::scenario::{ModuleId, StudentInput, Verdict};
use crate::terminal::{Command, Feedback, TranscriptEntry};

pub const API_VERSION: u32 = 1;

/// Header carrying a client-chosen key that makes a POST safe to retry.
pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";

/// A body with its schema version.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Body<T> {
    pub v: u32,
    #[serde(flatten)]
    pub data: T,
}

impl<T> Body<T> {
    pub fn new(data: T) -> Self {
        Body { v: API_VERSION, data }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginRequest {
    pub username: String,
    pub password: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentInfo {
    pub username: String,
    pub display_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginResponse {
    pub token: String,
    /// Unix seconds.
    pub expires_at: i64,
    pub student: StudentInfo,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatus {
    pub completed: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<Stage>,
}

impl From<&LessonProgress> for StageStatus {
    fn from(p: &LessonProgress) -> Self {
        StageStatus {
            completed: p.completed_stages.iter().copied().collect(),
            pending: p.pending(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModuleSummary {
    pub id: ModuleId,
    pub title: String,
    pub story: String,
    pub stages: BTreeMap<Stage, String>,
    pub videos: Vec<Video>,
    pub options: Vec<OptionText>,
    pub default_input: StudentInput,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulesResponse {
    pub modules: Vec<ModuleSummary>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceRequest {
    pub module: ModuleId,
    pub attacked: bool,
    /// Defaults to the module's sample input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<StudentInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunResponse {
    pub trace_id: String,
    pub trace: EventTrace,
    pub status: StageStatus,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRequest {
    pub module: ModuleId,
    pub option: u8,
    #[serde(default = "yes")]
    pub attacked: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<StudentInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioResponse {
    pub trace_id: String,
    pub trace: EventTrace,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalOpenRequest {
    pub module: ModuleId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<StudentInput>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalView {
    pub session_id: String,
    pub module: ModuleId,
    pub help: String,
    pub completed: Vec<Command>,
    pub complete: bool,
    pub transcript: Vec<TranscriptEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalExecRequest {
    pub session_id: String,
    pub line: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalExecResponse {
    pub feedback: Feedback,
    /// Set when the line finished the lesson and produced a trace.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
    pub complete: bool,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachStartRequest {
    pub module: ModuleId,
    /// An attacked experience trace; defaults to the latest one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachStartResponse {
    pub session_id: String,
    pub coach_text: String,
    pub conversation: Conversation,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachReplyRequest {
    pub session_id: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoachReplyResponse {
    pub coach_text: String,
    pub source: ReplySource,
    pub closed: bool,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizView {
    pub module: ModuleId,
    pub questions: Vec<PublicQuestion>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuizSubmitRequest {
    pub module: ModuleId,
    pub answers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuizSubmitResponse {
    pub result: QuizResult,
    pub status: StageStatus,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyRequest {
    pub module: ModuleId,
    pub phase: SurveyPhase,
    pub answers: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProgressResponse {
    pub student: String,
    pub modules: Vec<LessonProgress>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceSource {
    Experience,
    Scenario,
    Terminal,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trace_id: String,
    pub module: ModuleId,
    pub source: TraceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attacked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option: Option<u8>,
    pub trace: EventTrace,
}

/// SSE event names on `/trace/{id}/stream`.
pub const SSE_EVENT: &str = "trace_event";
pub const SSE_OUTCOME: &str = "outcome";

pub type StreamEvent = Body<TraceEvent>;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamOutcome {
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedTRequest {
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

pub type PairedTResponse = TTest;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Message;

    #[test]
    fn bodies_carry_version() {
        let b = Body::new(ScenarioRequest {
            module: ModuleId::Hashing,
            option: 3,
            attacked: true,
            input: Some(StudentInput::Message(Message::new("hi").unwrap())),
        });
        let json = serde_json::to_value(&b).unwrap();
        assert_eq!(json["v"], 1);
        assert_eq!(json["module"], "hashing");
        assert_eq!(json["input"], "hi");
        let back: Body<ScenarioRequest> = serde_json::from_value(json).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn scenario_attacked_defaults_on() {
        let r: Body<ScenarioRequest> =
            serde_json::from_str(r#"{"v":1,"module":"asymmetric","option":2,"input":{"username":"a","password":"b"}}"#)
                .unwrap();
        assert!(r.data.attacked);
        assert!(matches!(r.data.input, Some(StudentInput::Credentials(_))));
    }
}
