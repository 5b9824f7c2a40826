//! Student accounts, seeded from a TOML file at startup.
//!
//! ```toml
//! [[accounts]]
//! username = "student01"
//! password = "river-lamp-42"          # or password_hash = "$argon2id$..."
//! display_name = "Student 01"
//! cohort = "workshop-a"
//! ```
//!
//! Plain passwords are hashed on load and never written anywhere.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use serde::Deserialize;
use thiserror::Error;

#[derive(Clone, Debug)]
pub struct Account {
    pub username: String,
    pub display_name: String,
    pub cohort: Option<String>,
    password_hash: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountsFile {
    accounts: Vec<AccountEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AccountEntry {
    username: String,
    #[serde(default)]
    password: Option<String>,
    #[serde(default)]
    password_hash: Option<String>,
    #[serde(default)]
    display_name: Option<String>,
    #[serde(default)]
    cohort: Option<String>,
}

#[derive(Debug, Error)]
pub enum AccountsError {
    #[error("cannot read accounts file: {0}")]
    Io(#[from] std::io::Error),
    #[error("accounts file does not parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("duplicate usernames: {}", .0.join(", "))]
    Duplicate(Vec<String>),
    #[error("account {0:?} needs exactly one of password or password_hash")]
    Credential(String),
    #[error("account {0:?} has an empty username")]
    EmptyUsername(String),
    #[error("account {user:?}: bad password hash: {reason}")]
    BadHash { user: String, reason: String },
}

pub fn hash_password(password: &str) -> String {
    let salt = SaltString::generate(&mut rand::rngs::OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .expect("argon2 with default params")
        .to_string()
}

fn verify(hash: &str, password: &str) -> bool {
    PasswordHash::new(hash)
        .map(|h| Argon2::default().verify_password(password.as_bytes(), &h).is_ok())
        .unwrap_or(false)
}

impl Account {
    pub fn verify(&self, password: &str) -> bool {
        verify(&self.password_hash, password)
    }
}

/// The account table plus a decoy hash so unknown usernames cost the same
/// as wrong passwords.
#[derive(Debug)]
pub struct Accounts {
    by_name: HashMap<String, Account>,
    decoy: String,
}

impl Accounts {
    pub fn load(path: &Path) -> Result<Self, AccountsError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn parse(text: &str) -> Result<Self, AccountsError> {
        let file: AccountsFile = toml::from_str(text)?;
        let mut seen = BTreeSet::new();
        let dups: BTreeSet<String> = file
            .accounts
            .iter()
            .filter(|a| !seen.insert(a.username.as_str()))
            .map(|a| a.username.clone())
            .collect();
        if !dups.is_empty() {
            return Err(AccountsError::Duplicate(dups.into_iter().collect()));
        }
        let mut by_name = HashMap::new();
        for a in file.accounts {
            if a.username.trim().is_empty() {
                return Err(AccountsError::EmptyUsername(a.username));
            }
            let password_hash = match (a.password, a.password_hash) {
                (Some(p), None) if !p.is_empty() => hash_password(&p),
                (None, Some(h)) => {
                    PasswordHash::new(&h).map_err(|e| AccountsError::BadHash {
                        user: a.username.clone(),
                        reason: e.to_string(),
                    })?;
                    h
                }
                _ => return Err(AccountsError::Credential(a.username)),
            };
            by_name.insert(
                a.username.clone(),
                Account {
                    display_name: a.display_name.unwrap_or_else(|| a.username.clone()),
                    username: a.username,
                    cohort: a.cohort,
                    password_hash,
                },
            );
        }
        Ok(Accounts {
            by_name,
            decoy: hash_password("decoy password that matches nothing"),
        })
    }

    pub fn get(&self, username: &str) -> Option<&Account> {
        self.by_name.get(username)
    }

    pub fn usernames(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// Checks a login. Runs one hash verification whether or not the
    /// username exists.
    pub fn authenticate(&self, username: &str, password: &str) -> Option<&Account> {
        match self.by_name.get(username) {
            Some(a) => a.verify(password).then_some(a),
            None => {
                let _ = verify(&self.decoy, password);
                None
            }
        }
    }
}
