//! Shared service state, startup and recovery.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use cryptolab_core::api::{StageStatus, TraceRecord};
use cryptolab_core::coach::{self, ChatProvider, Conversation, ReplayProvider};
use cryptolab_core::entropy::Entropy;
use cryptolab_core::lessons::{validate_content_pack, ContentPack, LessonProgress, Stage, Violation};
use cryptolab_core::scenario::{Lab, ModuleId};
use cryptolab_core::terminal::TerminalSession;
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::sync::Mutex;

use crate::accounts::{Accounts, AccountsError};
use crate::error::ApiError;
use crate::store::{self, Record, Store, StoreError};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(8 * 60 * 60);
pub const DEFAULT_STREAM_INTERVAL: Duration = Duration::from_millis(600);

/// Where coach replies come from.
#[derive(Clone, Debug, Default)]
pub enum CoachMode {
    /// The environment decides (see `coach::provider_from_env`).
    #[default]
    Env,
    /// Script only.
    Off,
    /// Recorded replies from a fixture directory.
    Replay(PathBuf),
}

#[derive(Clone, Debug)]
pub struct Config {
    pub accounts: PathBuf,
    /// `None` uses the bundled pack.
    pub content: Option<PathBuf>,
    pub data_dir: PathBuf,
    /// Deterministic demo mode.
    pub seed: Option<u64>,
    pub session_ttl: Duration,
    /// Gap between streamed trace events at speed 1.
    pub stream_interval: Duration,
    pub coach: CoachMode,
}

impl Config {
    pub fn new(accounts: impl Into<PathBuf>, data_dir: impl Into<PathBuf>) -> Self {
        Config {
            accounts: accounts.into(),
            content: None,
            data_dir: data_dir.into(),
            seed: None,
            session_ttl: DEFAULT_SESSION_TTL,
            stream_interval: DEFAULT_STREAM_INTERVAL,
            coach: CoachMode::Env,
        }
    }
}

#[derive(Debug, Error)]
pub enum StartupError {
    #[error(transparent)]
    Accounts(#[from] AccountsError),
    #[error(transparent)]
    Pack(#[from] cryptolab_core::lessons::pack::PackError),
    #[error("content pack has {} violation(s):\n{}", .0.len(), .0.iter().map(|v| format!("  - {v}")).collect::<Vec<_>>().join("\n"))]
    InvalidPack(Vec<Violation>),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Clone, Debug)]
pub struct Session {
    pub student: String,
    pub expires_at: i64,
}

#[derive(Clone, Debug, Default)]
pub struct ExperienceRuns {
    pub ideal: Option<String>,
    pub attacked: Option<String>,
}

#[derive(Clone, Debug)]
pub struct IdemEntry {
    pub fingerprint: String,
    pub status: u16,
    pub body: serde_json::Value,
}

/// Everything one student owns. Guarded by a per-student lock, which also
/// serializes that student's terminal and coach commands.
#[derive(Debug)]
pub struct StudentState {
    pub username: String,
    pub seed: [u8; 32],
    pub runs: u64,
    pub progress: BTreeMap<ModuleId, LessonProgress>,
    pub experience: BTreeMap<ModuleId, ExperienceRuns>,
    pub traces: BTreeMap<String, TraceRecord>,
    pub terminals: BTreeMap<String, TerminalSession>,
    pub conversations: BTreeMap<String, Conversation>,
    pub idempotency: HashMap<String, IdemEntry>,
}

impl StudentState {
    fn new(username: &str, seed: [u8; 32]) -> Self {
        StudentState {
            username: username.to_owned(),
            seed,
            runs: 0,
            progress: BTreeMap::new(),
            experience: BTreeMap::new(),
            traces: BTreeMap::new(),
            terminals: BTreeMap::new(),
            conversations: BTreeMap::new(),
            idempotency: HashMap::new(),
        }
    }

    pub fn progress(&self, m: ModuleId) -> LessonProgress {
        self.progress
            .get(&m)
            .cloned()
            .unwrap_or_else(|| LessonProgress::new(&self.username, m))
    }

    pub fn status(&self, m: ModuleId) -> StageStatus {
        StageStatus::from(&self.progress(m))
    }

    pub fn may_enter(&self, m: ModuleId, stage: Stage) -> Result<(), ApiError> {
        Ok(self.progress(m).may_enter(stage)?)
    }

    /// Entropy for the next run: the student's fixed keys with fresh nonces.
    pub fn next_entropy(&mut self, store: &Store) -> Result<Entropy, ApiError> {
        let n = self.runs;
        self.runs += 1;
        store
            .append(&self.student_record())
            .map_err(ApiError::internal)?;
        Ok(Entropy::from_seed_bytes(self.seed).with_nonce_context(&format!("run-{n}")))
    }

    fn student_record(&self) -> Record {
        Record::Student {
            student: self.username.clone(),
            seed: hex::encode(self.seed),
            runs: self.runs,
        }
    }

    pub fn save_progress(&mut self, store: &Store, p: LessonProgress) -> Result<(), ApiError> {
        store
            .append(&Record::Progress { progress: p.clone() })
            .map_err(ApiError::internal)?;
        self.progress.insert(p.module, p);
        Ok(())
    }

    pub fn advance(&mut self, store: &Store, m: ModuleId, stage: Stage) -> Result<(), ApiError> {
        let mut p = self.progress(m);
        if p.is_done(stage) {
            return Ok(());
        }
        p.advance(stage)?;
        self.save_progress(store, p)
    }

    pub fn save_trace(&mut self, store: &Store, record: TraceRecord) -> Result<(), ApiError> {
        store
            .append(&Record::Trace {
                student: self.username.clone(),
                record: record.clone(),
            })
            .map_err(ApiError::internal)?;
        self.traces.insert(record.trace_id.clone(), record);
        Ok(())
    }

    pub fn save_experience(&mut self, store: &Store, m: ModuleId, runs: ExperienceRuns) -> Result<(), ApiError> {
        store
            .append(&Record::Experience {
                student: self.username.clone(),
                module: m,
                ideal: runs.ideal.clone(),
                attacked: runs.attacked.clone(),
            })
            .map_err(ApiError::internal)?;
        self.experience.insert(m, runs);
        Ok(())
    }

    pub fn save_terminal(&mut self, store: &Store, id: &str, session: TerminalSession) -> Result<(), ApiError> {
        store
            .append(&Record::Terminal {
                student: self.username.clone(),
                session_id: id.to_owned(),
                session: session.clone(),
            })
            .map_err(ApiError::internal)?;
        self.terminals.insert(id.to_owned(), session);
        Ok(())
    }

    pub fn save_conversation(&mut self, store: &Store, conv: Conversation) -> Result<(), ApiError> {
        store
            .append(&Record::Conversation {
                student: self.username.clone(),
                conversation: conv.clone(),
            })
            .map_err(ApiError::internal)?;
        self.conversations.insert(conv.id.clone(), conv);
        Ok(())
    }

    pub fn save_idempotency(&mut self, store: &Store, key: &str, entry: IdemEntry) -> Result<(), ApiError> {
        store
            .append(&Record::Idempotency {
                student: self.username.clone(),
                key: key.to_owned(),
                fingerprint: entry.fingerprint.clone(),
                status: entry.status,
                body: entry.body.clone(),
            })
            .map_err(ApiError::internal)?;
        self.idempotency.insert(key.to_owned(), entry);
        Ok(())
    }

    fn records(&self, out: &mut Vec<Record>) {
        let who = || self.username.clone();
        out.push(self.student_record());
        out.extend(self.progress.values().map(|p| Record::Progress { progress: p.clone() }));
        out.extend(self.experience.iter().map(|(m, r)| Record::Experience {
            student: who(),
            module: *m,
            ideal: r.ideal.clone(),
            attacked: r.attacked.clone(),
        }));
        out.extend(self.traces.values().map(|r| Record::Trace {
            student: who(),
            record: r.clone(),
        }));
        out.extend(self.terminals.iter().map(|(id, s)| Record::Terminal {
            student: who(),
            session_id: id.clone(),
            session: s.clone(),
        }));
        out.extend(self.conversations.values().map(|c| Record::Conversation {
            student: who(),
            conversation: c.clone(),
        }));
        out.extend(self.idempotency.iter().map(|(k, e)| Record::Idempotency {
            student: who(),
            key: k.clone(),
            fingerprint: e.fingerprint.clone(),
            status: e.status,
            body: e.body.clone(),
        }));
    }
}

pub struct Inner {
    pub pack: ContentPack,
    pub lab: Lab,
    pub accounts: Accounts,
    pub sessions: RwLock<HashMap<String, Session>>,
    pub students: HashMap<String, Arc<Mutex<StudentState>>>,
    pub store: Store,
    pub session_ttl: Duration,
    pub stream_interval: Duration,
    pub provider: Option<Arc<dyn ChatProvider>>,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Inner>);

impl std::ops::Deref for AppState {
    type Target = Inner;
    fn deref(&self) -> &Inner {
        &self.0
    }
}

pub fn now_secs() -> i64 {
    chrono::Utc::now().timestamp()
}

pub fn now_ms() -> u64 {
    chrono::Utc::now().timestamp_millis().max(0) as u64
}

pub fn token_hash(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

/// A fresh random identifier with a readable prefix.
pub fn new_id(prefix: &str) -> String {
    let mut b = [0u8; 12];
    rand::rngs::OsRng.fill_bytes(&mut b);
    format!("{prefix}-{}", hex::encode(b))
}

fn student_seed(demo: Option<u64>, username: &str) -> [u8; 32] {
    match demo {
        Some(s) => {
            let mut h = Sha256::new();
            h.update(b"cryptolab-demo");
            h.update(s.to_le_bytes());
            h.update(username.as_bytes());
            h.finalize().into()
        }
        None => {
            let mut b = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut b);
            b
        }
    }
}

impl AppState {
    /// Loads accounts and content, replays the store, compacts it, and
    /// returns ready state. Refuses to start on any validation failure.
    pub fn open(cfg: &Config) -> Result<Self, StartupError> {
        let accounts = Accounts::load(&cfg.accounts)?;
        let pack = match &cfg.content {
            Some(p) => ContentPack::load(p)?,
            None => ContentPack::builtin(),
        };
        let violations = validate_content_pack(&pack);
        if !violations.is_empty() {
            return Err(StartupError::InvalidPack(violations));
        }

        let records = store::load(&cfg.data_dir)?;
        let mut students: HashMap<String, StudentState> = HashMap::new();
        let mut sessions = HashMap::new();
        let now = now_secs();
        let mut dropped = 0usize;
        for r in records {
            let owner = match &r {
                Record::Session { student, .. }
                | Record::Student { student, .. }
                | Record::Experience { student, .. }
                | Record::Trace { student, .. }
                | Record::Terminal { student, .. }
                | Record::Conversation { student, .. }
                | Record::Idempotency { student, .. } => student.clone(),
                Record::Progress { progress } => progress.student_id.clone(),
            };
            if accounts.get(&owner).is_none() {
                dropped += 1;
                continue;
            }
            let st = students
                .entry(owner.clone())
                .or_insert_with(|| StudentState::new(&owner, student_seed(cfg.seed, &owner)));
            match r {
                Record::Session {
                    token_hash,
                    student,
                    expires_at,
                } => {
                    if expires_at > now {
                        sessions.insert(token_hash, Session { student, expires_at });
                    }
                }
                Record::Student { seed, runs, .. } => {
                    if let Ok(Ok(seed)) = hex::decode(&seed).map(<[u8; 32]>::try_from) {
                        st.seed = seed;
                    }
                    st.runs = runs;
                }
                Record::Progress { progress } => {
                    st.progress.insert(progress.module, progress);
                }
                Record::Experience {
                    module, ideal, attacked, ..
                } => {
                    st.experience.insert(module, ExperienceRuns { ideal, attacked });
                }
                Record::Trace { record, .. } => {
                    st.traces.insert(record.trace_id.clone(), record);
                }
                Record::Terminal { session_id, session, .. } => {
                    st.terminals.insert(session_id, session);
                }
                Record::Conversation { conversation, .. } => {
                    st.conversations.insert(conversation.id.clone(), conversation);
                }
                Record::Idempotency {
                    key,
                    fingerprint,
                    status,
                    body,
                    ..
                } => {
                    st.idempotency.insert(key, IdemEntry { fingerprint, status, body });
                }
            }
        }
        if dropped > 0 {
            tracing::warn!(dropped, "ignoring stored records for accounts that no longer exist");
        }
        for name in accounts.usernames() {
            students
                .entry(name.to_owned())
                .or_insert_with(|| StudentState::new(name, student_seed(cfg.seed, name)));
        }

        let mut snapshot = Vec::new();
        for (hash, s) in &sessions {
            snapshot.push(Record::Session {
                token_hash: hash.clone(),
                student: s.student.clone(),
                expires_at: s.expires_at,
            });
        }
        let mut names: Vec<&String> = students.keys().collect();
        names.sort();
        for n in names {
            students[n].records(&mut snapshot);
        }
        let store = Store::rewrite(&cfg.data_dir, &snapshot)?;
        tracing::info!(path = %store.path().display(), records = snapshot.len(), "state loaded");

        let provider: Option<Arc<dyn ChatProvider>> = match &cfg.coach {
            CoachMode::Off => None,
            CoachMode::Replay(dir) => Some(Arc::new(ReplayProvider::new(dir))),
            CoachMode::Env => coach::provider_from_env().map(Arc::from),
        };
        if provider.is_none() {
            tracing::info!("no coach provider configured; replies come from the fallback script");
        }

        Ok(AppState(Arc::new(Inner {
            lab: pack.lab(),
            pack,
            accounts,
            sessions: RwLock::new(sessions),
            students: students
                .into_iter()
                .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
                .collect(),
            store,
            session_ttl: cfg.session_ttl,
            stream_interval: cfg.stream_interval,
            provider,
        })))
    }

    pub fn student(&self, name: &str) -> Result<Arc<Mutex<StudentState>>, ApiError> {
        self.students.get(name).cloned().ok_or_else(ApiError::unauthorized)
    }

    /// Resolves a bearer token to a username.
    pub fn check_token(&self, token: &str) -> Option<String> {
        let sessions = self.sessions.read().expect("session lock");
        let s = sessions.get(&token_hash(token))?;
        (s.expires_at > now_secs()).then(|| s.student.clone())
    }

    pub fn create_session(&self, student: &str) -> Result<(String, i64), ApiError> {
        let mut raw = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let expires_at = now_secs() + self.session_ttl.as_secs() as i64;
        let hash = token_hash(&token);
        self.store
            .append(&Record::Session {
                token_hash: hash.clone(),
                student: student.to_owned(),
                expires_at,
            })
            .map_err(ApiError::internal)?;
        self.sessions.write().expect("session lock").insert(
            hash,
            Session {
                student: student.to_owned(),
                expires_at,
            },
        );
        Ok((token, expires_at))
    }
}
