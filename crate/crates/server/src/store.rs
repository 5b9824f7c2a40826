//! Append-only JSON-lines store.
//!
//! Every mutation appends one self-contained record; on startup the file is
//! replayed (last record for a key wins) and rewritten compactly. A torn
//! final line from a crash mid-write is dropped. Damage anywhere else stops
//! startup instead of silently losing data.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use cryptolab_core::api::TraceRecord;
use cryptolab_core::coach::Conversation;
use cryptolab_core::lessons::LessonProgress;
use cryptolab_core::scenario::ModuleId;
use cryptolab_core::terminal::TerminalSession;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_FILE: &str = "state.jsonl";

// Records live only between a read and a write; size doesn't matter.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Record {
    Session {
        token_hash: String,
        student: String,
        expires_at: i64,
    },
    Student {
        student: String,
        seed: String,
        runs: u64,
    },
    Progress {
        progress: LessonProgress,
    },
    Experience {
        student: String,
        module: ModuleId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ideal: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        attacked: Option<String>,
    },
    Trace {
        student: String,
        record: TraceRecord,
    },
    Terminal {
        student: String,
        session_id: String,
        session: TerminalSession,
    },
    Conversation {
        student: String,
        conversation: Conversation,
    },
    Idempotency {
        student: String,
        key: String,
        fingerprint: String,
        status: u16,
        body: serde_json::Value,
    },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: line {line} is damaged: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

pub struct Store {
    path: PathBuf,
    file: Mutex<File>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("path", &self.path).finish()
    }
}

/// Reads every record in `dir`'s state file.
pub fn load(dir: &Path) -> Result<Vec<Record>, StoreError> {
    let path = dir.join(STATE_FILE);
    let file = match File::open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(e) if i + 1 == lines.len() => {
                tracing::warn!(line = i + 1, error = %e, "dropping torn final record");
            }
            Err(e) => {
                return Err(StoreError::Corrupt {
                    path,
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

impl Store {
    /// Replaces the state file with `records` and opens it for appending.
    pub fn rewrite(dir: &Path, records: &[Record]) -> Result<Self, StoreError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(STATE_FILE);
        let tmp = dir.join(format!("{STATE_FILE}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            for r in records {
                writeln!(f, "{}", serde_json::to_string(r).expect("records serialize"))?;
            }
            f.sync_all()?;
        }
        fs::rename(&tmp, &path)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(Store {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn append(&self, record: &Record) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("records serialize");
        line.push('\n');
        let mut f = self.file.lock().expect("store lock");
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session(n: i64) -> Record {
        Record::Session {
            token_hash: format!("h{n}"),
            student: "s".into(),
            expires_at: n,
        }
    }

    #[test]
    fn append_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::rewrite(dir.path(), &[session(1)]).unwrap();
        store.append(&session(2)).unwrap();
        drop(store);
        assert_eq!(load(dir.path()).unwrap(), vec![session(1), session(2)]);
    }

    #[test]
    fn torn_tail_is_dropped_but_middle_damage_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(STATE_FILE);
        let good = serde_json::to_string(&session(1)).unwrap();
        fs::write(&path, format!("{good}\n{{\"type\":\"sess")).unwrap();
        assert_eq!(load(dir.path()).unwrap(), vec![session(1)]);
        fs::write(&path, format!("garbage\n{good}\n")).unwrap();
        assert!(matches!(load(dir.path()), Err(StoreError::Corrupt { line: 1, .. })));
    }

    #[test]
    fn missing_file_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load(&dir.path().join("nope")).unwrap().is_empty());
    }
}
