//! The reflection coach.
//!
//! A conversation opens with a question about the attack the student just
//! watched. Each student reply is answered by a chat-completion provider when
//! one is configured and reachable, otherwise by a keyword-routed dialog
//! script from the content pack. Both paths share the script's cursor, so the
//! conversation ends at the same closing node either way.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::channel::{EventKind, EventTrace, Outcome};
use crate::lessons::readability;
use crate::scenario::ModuleId;

pub const DEFAULT_MAX_REPLY_SENTENCES: usize = 4;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

pub const ENV_ENDPOINT: &str = "CRYPTOLAB_COACH_ENDPOINT";
pub const ENV_MODEL: &str = "CRYPTOLAB_COACH_MODEL";
pub const ENV_API_KEY: &str = "CRYPTOLAB_COACH_API_KEY";
pub const ENV_TIMEOUT_SECS: &str = "CRYPTOLAB_COACH_TIMEOUT_SECS";
pub const ENV_FIXTURES: &str = "CRYPTOLAB_COACH_FIXTURES";

fn default_cap() -> usize {
    DEFAULT_MAX_REPLY_SENTENCES
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoachProfile {
    pub system_prompt: String,
    /// `{attack}` becomes the attack event's description, `{outcome}` the
    /// trace outcome.
    pub opening_question_template: String,
    #[serde(default = "default_cap")]
    pub max_reply_sentences: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub keywords: Vec<String>,
    pub next: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Routes {
    #[serde(default)]
    pub branches: Vec<Branch>,
    pub otherwise: String,
}

impl Routes {
    /// First branch with a keyword found in the reply, else `otherwise`.
    pub fn pick(&self, reply: &str) -> &str {
        let reply = reply.to_lowercase();
        self.branches
            .iter()
            .find(|b| b.keywords.iter().any(|k| reply.contains(&k.to_lowercase())))
            .map_or(&self.otherwise, |b| &b.next)
    }

    fn targets(&self) -> impl Iterator<Item = &str> {
        self.branches
            .iter()
            .map(|b| b.next.as_str())
            .chain(std::iter::once(self.otherwise.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptNode {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub closing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routes: Option<Routes>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FallbackScript {
    /// Said when the student sends an empty reply.
    pub reprompt: String,
    /// Routes for the student's answer to the opening question.
    pub entry: Routes,
    pub nodes: Vec<ScriptNode>,
}

/// Fewest student replies that can close a conversation.
pub const MIN_SCRIPT_DEPTH: usize = 3;

impl FallbackScript {
    pub fn node(&self, id: &str) -> Option<&ScriptNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Structural problems, empty when the script is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut ids = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id.as_str()) {
                out.push(format!("node {:?} is defined twice", n.id));
            }
            match (&n.routes, n.closing) {
                (Some(_), true) => out.push(format!("closing node {:?} has routes", n.id)),
                (None, false) => out.push(format!("node {:?} has no routes and is not closing", n.id)),
                _ => {}
            }
            if !n.closing && !n.text.trim_end().ends_with('?') {
                out.push(format!("node {:?} does not end with a question", n.id));
            }
        }
        if !self.reprompt.trim_end().ends_with('?') {
            out.push("reprompt does not end with a question".to_owned());
        }
        let all_routes = std::iter::once(&self.entry).chain(self.nodes.iter().filter_map(|n| n.routes.as_ref()));
        for r in all_routes {
            for t in r.targets() {
                if !ids.contains(t) {
                    out.push(format!("route points to unknown node {t:?}"));
                }
            }
        }
        if !out.is_empty() {
            return out;
        }

        // Breadth-first from the opening answer: depth 1 is the first reply.
        let mut depth: BTreeMap<&str, usize> = BTreeMap::new();
        let mut queue: VecDeque<(&str, usize)> = self.entry.targets().map(|t| (t, 1)).collect();
        while let Some((id, d)) = queue.pop_front() {
            if depth.contains_key(id) {
                continue;
            }
            depth.insert(id, d);
            if let Some(r) = self.node(id).and_then(|n| n.routes.as_ref()) {
                queue.extend(r.targets().map(|t| (t, d + 1)));
            }
        }
        for n in &self.nodes {
            if !depth.contains_key(n.id.as_str()) {
                out.push(format!("node {:?} is unreachable", n.id));
            }
        }
        let closings: Vec<usize> = self
            .nodes
            .iter()
            .filter(|n| n.closing)
            .filter_map(|n| depth.get(n.id.as_str()).copied())
            .collect();
        match closings.iter().min() {
            None => out.push("no closing node is reachable".to_owned()),
            Some(d) if *d < MIN_SCRIPT_DEPTH => out.push(format!(
                "a closing node is reachable after {d} replies; at least {MIN_SCRIPT_DEPTH} are needed"
            )),
            _ => {}
        }
        // Every node must be able to reach a closing node.
        let mut can_close: BTreeSet<&str> = self.nodes.iter().filter(|n| n.closing).map(|n| n.id.as_str()).collect();
        loop {
            let before = can_close.len();
            for n in &self.nodes {
                if let Some(r) = &n.routes {
                    if r.targets().any(|t| can_close.contains(t)) {
                        can_close.insert(n.id.as_str());
                    }
                }
            }
            if can_close.len() == before {
                break;
            }
        }
        for n in &self.nodes {
            if !can_close.contains(n.id.as_str()) {
                out.push(format!("node {:?} can never reach a closing node", n.id));
            }
        }
        out
    }
}

/// Everything the coach needs for one module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoachContent {
    pub profile: CoachProfile,
    pub script: FallbackScript,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Coach,
    Student,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplySource {
    LiveProvider,
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// Unix milliseconds, supplied by the caller.
    pub at_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub source: Option<ReplySource>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub module: ModuleId,
    pub turns: Vec<Turn>,
    /// Source of the latest coach turn.
    pub source: ReplySource,
    cursor: Option<String>,
    closed: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoachError {
    #[error("the trace shows no attack to reflect on")]
    NotAnAttackTrace,
    #[error("the conversation is over")]
    Closed,
    #[error("script is broken: {0}")]
    Script(String),
}

/// The attack event a conversation opens with.
fn attack_event(trace: &EventTrace) -> Option<&str> {
    [EventKind::Modified, EventKind::KeyStolen, EventKind::DecryptedByAttacker]
        .into_iter()
        .find_map(|k| trace.first(k))
        .map(|e| e.detail.as_str())
}

fn outcome_phrase(o: Outcome) -> &'static str {
    match o {
        Outcome::Accepted => "the message was accepted",
        Outcome::Rejected => "the message was turned away",
        Outcome::ParseError => "the message could not be read",
        Outcome::Compromised => "the attacker read the secret",
        Outcome::Delivered => "the message arrived",
    }
}

impl Conversation {
    /// Opens a reflection on an attacked experience trace.
    pub fn start(
        id: impl Into<String>,
        module: ModuleId,
        content: &CoachContent,
        trace: &EventTrace,
        at_ms: u64,
    ) -> Result<Self, CoachError> {
        let attack = attack_event(trace).ok_or(CoachError::NotAnAttackTrace)?;
        let text = content
            .profile
            .opening_question_template
            .replace("{attack}", attack)
            .replace("{outcome}", outcome_phrase(trace.outcome));
        Ok(Conversation {
            id: id.into(),
            module,
            turns: vec![Turn {
                speaker: Speaker::Coach,
                text,
                at_ms,
                source: Some(ReplySource::Fallback),
            }],
            source: ReplySource::Fallback,
            cursor: None,
            closed: false,
        })
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Number of student replies so far.
    pub fn exchanges(&self) -> usize {
        self.turns.iter().filter(|t| t.speaker == Speaker::Student).count()
    }

    /// Appends the student's reply and the coach's answer, and returns the
    /// coach turn.
    pub fn reply(
        &mut self,
        content: &CoachContent,
        provider: Option<&dyn ChatProvider>,
        student_text: &str,
        at_ms: u64,
    ) -> Result<&Turn, CoachError> {
        if self.closed {
            return Err(CoachError::Closed);
        }
        let script = &content.script;
        let student_text = student_text.trim();
        if student_text.is_empty() {
            self.push(Speaker::Student, String::new(), at_ms, None);
            self.push(Speaker::Coach, script.reprompt.clone(), at_ms, Some(ReplySource::Fallback));
            self.source = ReplySource::Fallback;
            return Ok(self.turns.last().expect("just pushed"));
        }

        let routes = match &self.cursor {
            None => &script.entry,
            Some(id) => script
                .node(id)
                .and_then(|n| n.routes.as_ref())
                .ok_or_else(|| CoachError::Script(format!("node {id:?} has no routes")))?,
        };
        let next_id = routes.pick(student_text).to_owned();
        let node = script
            .node(&next_id)
            .ok_or_else(|| CoachError::Script(format!("unknown node {next_id:?}")))?;

        let live = provider.and_then(|p| {
            let messages = provider_messages(&content.profile, self, student_text);
            match p.complete(&messages) {
                Ok(raw) => shape_reply(&raw, content.profile.max_reply_sentences, node),
                Err(e) => {
                    tracing::warn!(conversation = %self.id, error = %e, "coach provider failed, using script");
                    None
                }
            }
        });
        let (text, source) = match live {
            Some(text) => (text, ReplySource::LiveProvider),
            None => (node.text.clone(), ReplySource::Fallback),
        };
        let closing = node.closing;
        self.push(Speaker::Student, student_text.to_owned(), at_ms, None);
        self.push(Speaker::Coach, text, at_ms, Some(source));
        self.cursor = Some(next_id);
        self.closed = closing;
        self.source = source;
        Ok(self.turns.last().expect("just pushed"))
    }

    fn push(&mut self, speaker: Speaker, text: String, at_ms: u64, source: Option<ReplySource>) {
        self.turns.push(Turn {
            speaker,
            text,
            at_ms,
            source,
        });
    }
}

/// Caps a provider reply at `cap` sentences and makes sure a non-closing
/// reply ends with a question, borrowing the script node's question if the
/// provider did not ask one. Returns `None` for an empty reply.
pub fn shape_reply(raw: &str, cap: usize, node: &ScriptNode) -> Option<String> {
    let cap = cap.max(1);
    let sents = readability::sentences(raw);
    if sents.is_empty() {
        return None;
    }
    let mut kept: Vec<&str> = sents.iter().take(cap).copied().collect();
    if !node.closing && !kept.last().is_some_and(|s| s.ends_with('?')) {
        let question = readability::sentences(&node.text)
            .into_iter()
            .rev()
            .find(|s| s.ends_with('?'))?;
        kept.truncate(cap - 1);
        kept.push(question);
    }
    Some(kept.join(" "))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

/// System prompt, the conversation so far, and the new student reply.
pub fn provider_messages(profile: &CoachProfile, conv: &Conversation, student_text: &str) -> Vec<ChatMessage> {
    let mut out = vec![ChatMessage::new(
        "system",
        format!(
            "{}\nUse at most {} sentences. End with one question.",
            profile.system_prompt, profile.max_reply_sentences
        ),
    )];
    for t in &conv.turns {
        let role = match t.speaker {
            Speaker::Coach => "assistant",
            Speaker::Student => "user",
        };
        out.push(ChatMessage::new(role, t.text.clone()));
    }
    out.push(ChatMessage::new("user", student_text));
    out
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider returned HTTP {0}")]
    Status(u16),
    #[error("provider request failed: {0}")]
    Transport(String),
    #[error("provider reply could not be read: {0}")]
    BadResponse(String),
    #[error("no recorded reply for request {0}")]
    MissingFixture(String),
    #[error("fixture store: {0}")]
    Io(#[from] std::io::Error),
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError>;
}

/// A chat-completions endpoint (`POST {model, messages}` returning
/// `choices[0].message.content`).
pub struct HttpChatProvider {
    endpoint: String,
    model: String,
    api_key: String,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpChatProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatProvider")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .finish()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: ChatMessage,
}

impl HttpChatProvider {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(HttpChatProvider {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: api_key.into(),
            client,
        })
    }

    /// Reads endpoint, model and credential from the environment. Returns
    /// `None` when any of them is missing.
    pub fn from_env() -> Option<Self> {
        let get = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let key = get(ENV_API_KEY)?;
        let endpoint = get(ENV_ENDPOINT)?;
        let model = get(ENV_MODEL)?;
        let timeout = get(ENV_TIMEOUT_SECS)
            .and_then(|s| s.parse().ok())
            .map_or(DEFAULT_TIMEOUT, Duration::from_secs);
        Self::new(endpoint, model, key, timeout).ok()
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&serde_json::json!({ "model": self.model, "messages": messages }))
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    ProviderError::Timeout
                } else {
                    ProviderError::Transport(e.without_url().to_string())
                }
            })?;
        let status = resp.status();
        if !status.is_success() {
            return Err(ProviderError::Status(status.as_u16()));
        }
        let body: CompletionResponse = resp.json().map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| ProviderError::BadResponse("no choices".into()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub messages: Vec<ChatMessage>,
    pub reply: String,
}

/// Fixture file name for a request.
pub fn fixture_key(messages: &[ChatMessage]) -> String {
    let json = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(json))
}

/// Serves recorded replies from a directory of `<key>.json` files.
#[derive(Clone, Debug)]
pub struct ReplayProvider {
    dir: PathBuf,
}

impl ReplayProvider {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ReplayProvider { dir: dir.into() }
    }
}

impl ChatProvider for ReplayProvider {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let key = fixture_key(messages);
        let path = self.dir.join(format!("{key}.json"));
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ProviderError::MissingFixture(key)),
            Err(e) => return Err(e.into()),
        };
        let fx: Fixture = serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        Ok(fx.reply)
    }
}

/// Passes requests to another provider and saves each exchange as a fixture.
pub struct RecordingProvider<P> {
    inner: P,
    dir: PathBuf,
}

impl<P: ChatProvider> RecordingProvider<P> {
    pub fn new(inner: P, dir: impl AsRef<Path>) -> Result<Self, ProviderError> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(RecordingProvider {
            inner,
            dir: dir.as_ref().to_owned(),
        })
    }
}

impl<P: ChatProvider> ChatProvider for RecordingProvider<P> {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, ProviderError> {
        let reply = self.inner.complete(messages)?;
        let fx = Fixture {
            messages: messages.to_vec(),
            reply: reply.clone(),
        };
        let path = self.dir.join(format!("{}.json", fixture_key(messages)));
        fs::write(path, serde_json::to_vec_pretty(&fx).expect("fixture serializes"))?;
        Ok(reply)
    }
}

/// Provider chosen from the environment: a fixture directory if set, else
/// the HTTP provider if fully configured, else none (script only).
pub fn provider_from_env() -> Option<Box<dyn ChatProvider>> {
    if let Some(dir) = std::env::var_os(ENV_FIXTURES).filter(|d| !d.is_empty()) {
        return Some(Box::new(ReplayProvider::new(dir)));
    }
    HttpChatProvider::from_env().map(|p| Box::new(p) as Box<dyn ChatProvider>)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::channel::{PartyId, TraceEvent};
    use std::sync::atomic::{AtomicUsize, Ordering};

    pub(crate) fn content() -> CoachContent {
        let node = |id: &str, text: &str, next: Option<&str>| ScriptNode {
            id: id.into(),
            text: text.into(),
            closing: next.is_none(),
            routes: next.map(|n| Routes {
                branches: vec![],
                otherwise: n.into(),
            }),
        };
        CoachContent {
            profile: CoachProfile {
                system_prompt: "Be kind.".into(),
                opening_question_template: "You saw this: {attack}. What went wrong?".into(),
                max_reply_sentences: 4,
            },
            script: FallbackScript {
                reprompt: "Can you tell me a bit more?".into(),
                entry: Routes {
                    branches: vec![Branch {
                        keywords: vec!["changed".into(), "modif".into()],
                        next: "integrity".into(),
                    }],
                    otherwise: "hint".into(),
                },
                nodes: vec![
                    node("hint", "Look at what Sita got. Was it what Mary sent?", Some("integrity")),
                    node(
                        "integrity",
                        "Yes. That is about integrity: the message must not change on the way. How could Sita check it?",
                        Some("fix"),
                    ),
                    node("fix", "A hash helps. What if the attacker makes a new hash too?", Some("end")),
                    node("end", "Great work. Let us try the options next.", None),
                ],
            },
        }
    }

    fn attacked_trace() -> EventTrace {
        EventTrace {
            events: vec![TraceEvent {
                seq: 1,
                actor: PartyId::Attacker,
                kind: EventKind::Modified,
                detail: "The attacker changes the message to \"pay me\"".into(),
                payload_preview: String::new(),
            }],
            outcome: Outcome::Accepted,
        }
    }

    struct Canned(String, AtomicUsize);

    impl ChatProvider for Canned {
        fn complete(&self, _: &[ChatMessage]) -> Result<String, ProviderError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(self.0.clone())
        }
    }

    struct Down;

    impl ChatProvider for Down {
        fn complete(&self, _: &[ChatMessage]) -> Result<String, ProviderError> {
            Err(ProviderError::Timeout)
        }
    }

    #[test]
    fn script_is_valid() {
        assert_eq!(content().script.problems(), Vec::<String>::new());
    }

    #[test]
    fn opening_mentions_attack() {
        let c = Conversation::start("c1", ModuleId::Symmetric, &content(), &attacked_trace(), 0).unwrap();
        assert!(c.turns[0].text.contains("pay me"));
        assert_eq!(c.turns[0].speaker, Speaker::Coach);
    }

    #[test]
    fn ideal_trace_is_refused() {
        let t = EventTrace {
            events: vec![],
            outcome: Outcome::Accepted,
        };
        assert_eq!(
            Conversation::start("c", ModuleId::Hashing, &content(), &t, 0).unwrap_err(),
            CoachError::NotAnAttackTrace
        );
    }

    #[test]
    fn keyword_route_explains_integrity() {
        let cc = content();
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        let t = c.reply(&cc, None, "the attacker changed the message", 1).unwrap();
        assert!(t.text.contains("integrity"));
        assert!(t.text.ends_with('?'));
        assert_eq!(t.source, Some(ReplySource::Fallback));
    }

    #[test]
    fn three_exchanges_close_and_alternate() {
        let cc = content();
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        for (i, r) in ["no idea", "check it", "new hash"].iter().enumerate() {
            assert!(!c.is_closed());
            c.reply(&cc, None, r, i as u64).unwrap();
        }
        assert!(!c.is_closed());
        c.reply(&cc, None, "ok", 9).unwrap();
        assert!(c.is_closed());
        assert_eq!(c.reply(&cc, None, "more", 10).unwrap_err(), CoachError::Closed);
        for (i, t) in c.turns.iter().enumerate() {
            assert_eq!(t.speaker, if i % 2 == 0 { Speaker::Coach } else { Speaker::Student });
        }
    }

    #[test]
    fn empty_reply_reprompts_without_provider() {
        let cc = content();
        let p = Canned("Hello there?".into(), AtomicUsize::new(0));
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        let t = c.reply(&cc, Some(&p), "   ", 1).unwrap().clone();
        assert_eq!(t.text, cc.script.reprompt);
        assert_eq!(p.1.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn failing_provider_falls_back() {
        let cc = content();
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        let t = c.reply(&cc, Some(&Down), "hmm", 1).unwrap();
        assert_eq!(t.source, Some(ReplySource::Fallback));
        assert_eq!(c.source, ReplySource::Fallback);
    }

    #[test]
    fn live_reply_is_capped_and_ends_in_question() {
        let cc = content();
        let p = Canned("One. Two. Three. Four. Five. Six.".into(), AtomicUsize::new(0));
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        let t = c.reply(&cc, Some(&p), "hmm", 1).unwrap();
        assert_eq!(t.source, Some(ReplySource::LiveProvider));
        assert_eq!(readability::sentences(&t.text).len(), 4);
        assert!(t.text.starts_with("One. Two. Three."));
        assert!(t.text.ends_with("Was it what Mary sent?"));
    }

    #[test]
    fn live_question_within_cap_is_verbatim() {
        let cc = content();
        let p = Canned("Good point. Why?".into(), AtomicUsize::new(0));
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        assert_eq!(c.reply(&cc, Some(&p), "hmm", 1).unwrap().text, "Good point. Why?");
    }

    #[test]
    fn fallback_is_deterministic() {
        let cc = content();
        let run = || {
            let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 5).unwrap();
            for r in ["a", "changed", "b", "c"] {
                c.reply(&cc, None, r, 5).unwrap();
            }
            serde_json::to_string(&c).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn script_checks_catch_problems() {
        let mut s = content().script;
        s.entry.otherwise = "fix".into();
        s.entry.branches.clear();
        let problems = s.problems();
        assert!(problems.iter().any(|p| p.contains("unreachable")), "{problems:?}");
        assert!(problems.iter().any(|p| p.contains("after 2 replies")), "{problems:?}");

        let mut s = content().script;
        s.nodes[0].text = "No question here.".into();
        s.entry.otherwise = "nowhere".into();
        let problems = s.problems();
        assert!(problems.iter().any(|p| p.contains("question")));
        assert!(problems.iter().any(|p| p.contains("unknown node")));
    }

    #[test]
    fn credential_never_leaks() {
        let p = HttpChatProvider::new("http://127.0.0.1:9", "m", "sk-secret-123", Duration::from_millis(200)).unwrap();
        assert!(!format!("{p:?}").contains("sk-secret-123"));
        let cc = content();
        let mut c = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        c.reply(&cc, Some(&p), "the attacker changed it", 1).unwrap();
        assert_eq!(c.source, ReplySource::Fallback);
        assert!(!serde_json::to_string(&c).unwrap().contains("sk-secret-123"));
    }

    #[test]
    fn replay_serves_recorded_exchange() {
        let dir = tempfile::tempdir().unwrap();
        let cc = content();
        let rec = RecordingProvider::new(Canned("Nice. What next?".into(), AtomicUsize::new(0)), dir.path()).unwrap();
        let mut a = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        a.reply(&cc, Some(&rec), "hmm", 1).unwrap();
        let replay = ReplayProvider::new(dir.path());
        let mut b = Conversation::start("c", ModuleId::Hashing, &cc, &attacked_trace(), 0).unwrap();
        b.reply(&cc, Some(&replay), "hmm", 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(b.source, ReplySource::LiveProvider);
        // unseen request: no fixture, so the script answers
        b.reply(&cc, Some(&replay), "something new", 2).unwrap();
        assert_eq!(b.source, ReplySource::Fallback);
    }
}
