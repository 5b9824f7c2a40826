//! The ideal and attacked experiences for each lesson, plus the three
//! mitigation options students compare, each run for real through the
//! crypto primitives and the simulated channel.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{AttackerBehavior, Channel, ChannelError, EventKind, EventTrace, Outcome, PartyId, WireMessage};
use crate::crypto::{
    self, asym_decrypt, asym_encrypt, generate_keypair, make_envelope, sym_decrypt, sym_encrypt,
    Credentials, CryptoError, Envelope, KeyPair, Message, SymmetricKey, Verification,
};
use crate::entropy::Entropy;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleId {
    Hashing,
    Symmetric,
    Asymmetric,
}

impl ModuleId {
    pub const ALL: [ModuleId; 3] = [ModuleId::Hashing, ModuleId::Symmetric, ModuleId::Asymmetric];

    pub fn as_str(self) -> &'static str {
        match self {
            ModuleId::Hashing => "hashing",
            ModuleId::Symmetric => "symmetric",
            ModuleId::Asymmetric => "asymmetric",
        }
    }

    /// Sender and receiver in this module's story.
    pub fn parties(self) -> (PartyId, PartyId) {
        match self {
            ModuleId::Hashing => (PartyId::Peter, PartyId::UniversityPortal),
            ModuleId::Symmetric => (PartyId::Mary, PartyId::Sita),
            ModuleId::Asymmetric => (PartyId::Aria, PartyId::Server),
        }
    }

    pub fn takes_credentials(self) -> bool {
        self == ModuleId::Asymmetric
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModuleId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModuleId::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown module {s:?}"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Secure,
    Insecure,
    Incorrect,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub classification: Classification,
    pub reason: String,
}

/// What the student typed: a message, or a login for the asymmetric lesson.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudentInput {
    Message(Message),
    Credentials(Credentials),
}

/// Story content for one module.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narrative {
    pub attacker_text: Message,
    #[serde(default)]
    pub story: String,
    #[serde(default)]
    pub video_url: Option<String>,
}

impl Narrative {
    pub fn builtin(module: ModuleId) -> Self {
        let text = match module {
            ModuleId::Hashing => "I do not want to go to your school anymore.",
            ModuleId::Symmetric => "I lost my job, can you transfer money to my account.",
            ModuleId::Asymmetric => "The attacker now knows your login.",
        };
        Narrative {
            attacker_text: Message::new(text).expect("short text"),
            story: String::new(),
            video_url: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub module: ModuleId,
    pub option: u8,
    pub attacked: bool,
    pub narrative: Narrative,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("{module} needs {expected} as input")]
    InputMismatch { module: ModuleId, expected: &'static str },
    #[error("option must be 1, 2 or 3, got {0}")]
    InvalidOption(u8),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// A finished simulation with what was put on the wire.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimulationRun {
    pub trace: EventTrace,
    /// Protocol payloads in send order, before any tampering.
    pub sent: Vec<WireMessage>,
    /// Everything the attacker saw or produced.
    pub attacker_view: Vec<String>,
}

/// Bit flipped by the symmetric attacker: lowest bit of the first payload
/// byte after the IV.
pub const TAMPER_BIT: usize = 16 * 8;

/// The key Mary and Sita (or Aria and the server) agreed on beforehand.
pub fn shared_key(entropy: &Entropy) -> SymmetricKey {
    SymmetricKey::generate(&entropy.derive("shared-key"))
}

pub fn aria_keypair(entropy: &Entropy) -> Result<KeyPair, CryptoError> {
    generate_keypair(PartyId::Aria, entropy)
}

pub fn server_keypair(entropy: &Entropy) -> Result<KeyPair, CryptoError> {
    generate_keypair(PartyId::Server, entropy)
}

/// Fixed verdict for each mitigation option.
pub fn classify(module: ModuleId, option: u8) -> Result<Verdict, ScenarioError> {
    use Classification::*;
    let (classification, reason) = match (module, option) {
        (ModuleId::Hashing, 1) => (Insecure, "The attacker can change plain text and the portal cannot tell."),
        (ModuleId::Hashing, 2) => (Incorrect, "A hash alone cannot be turned back into the message, so the portal has nothing to read."),
        (ModuleId::Hashing, 3) => (Secure, "The portal makes the hash again and compares, so any change is caught."),
        (ModuleId::Symmetric, 1) => (Insecure, "The attacker changes the message and makes a new hash, so the change is not caught."),
        (ModuleId::Symmetric, 2) => (Secure, "With a shared key, the attacker can no longer read or change the message."),
        (ModuleId::Symmetric, 3) => (Incorrect, "The key is the hash of the message, so Sita cannot open it without the message."),
        (ModuleId::Asymmetric, 1) => (Insecure, "The shared key is sent in the open, so the attacker steals it and reads the login."),
        (ModuleId::Asymmetric, 2) => (Incorrect, "Only Aria's private key can open this, so the server cannot read it."),
        (ModuleId::Asymmetric, 3) => (Secure, "Only the server's private key can open this, and it never leaves the server."),
        (_, other) => return Err(ScenarioError::InvalidOption(other)),
    };
    Ok(Verdict {
        classification,
        reason: reason.to_owned(),
    })
}

/// Whether a trace shows the behavior its verdict claims.
///
/// Secure: tampering ends in a rejection, or the run is accepted with the
/// attacker having changed and read nothing. Incorrect: the receiver cannot
/// parse or decrypt. Insecure: a tampered message is accepted, or the
/// attacker reads it.
pub fn trace_verdict_consistent(trace: &EventTrace, verdict: &Verdict) -> bool {
    let modified = trace.has(EventKind::Modified);
    let read = trace.has(EventKind::DecryptedByAttacker) || trace.has(EventKind::KeyStolen);
    match verdict.classification {
        Classification::Secure => match trace.outcome {
            Outcome::Rejected => modified,
            Outcome::Accepted => !modified && !read,
            _ => false,
        },
        Classification::Incorrect => trace.outcome == Outcome::ParseError,
        Classification::Insecure => match trace.outcome {
            Outcome::Compromised => true,
            Outcome::Accepted => modified,
            _ => false,
        },
    }
}

/// Runs simulations with a module's story content.
#[derive(Clone, Debug)]
pub struct Lab {
    narratives: BTreeMap<ModuleId, Narrative>,
}

impl Default for Lab {
    fn default() -> Self {
        Lab {
            narratives: ModuleId::ALL
                .into_iter()
                .map(|m| (m, Narrative::builtin(m)))
                .collect(),
        }
    }
}

impl Lab {
    pub fn new(narratives: BTreeMap<ModuleId, Narrative>) -> Self {
        let mut lab = Lab::default();
        lab.narratives.extend(narratives);
        lab
    }

    pub fn narrative(&self, module: ModuleId) -> &Narrative {
        &self.narratives[&module]
    }

    pub fn spec(&self, module: ModuleId, option: u8, attacked: bool) -> ScenarioSpec {
        ScenarioSpec {
            module,
            option,
            attacked,
            narrative: self.narrative(module).clone(),
        }
    }

    pub fn run_experience(
        &self,
        module: ModuleId,
        attacked: bool,
        input: &StudentInput,
        entropy: &Entropy,
    ) -> Result<SimulationRun, ScenarioError> {
        let flow = Flow::new(module, input, self.narrative(module), attacked, entropy)?;
        match module {
            ModuleId::Asymmetric if !attacked => flow.asym_ideal(),
            _ => flow.option(1),
        }
    }

    pub fn run_option(
        &self,
        spec: &ScenarioSpec,
        input: &StudentInput,
        entropy: &Entropy,
    ) -> Result<(SimulationRun, Verdict), ScenarioError> {
        let verdict = classify(spec.module, spec.option)?;
        let flow = Flow::new(spec.module, input, &spec.narrative, spec.attacked, entropy)?;
        Ok((flow.option(spec.option)?, verdict))
    }
}

enum Payload {
    Text(Message),
    Login(Credentials),
}

struct Flow<'a> {
    module: ModuleId,
    payload: Payload,
    narrative: &'a Narrative,
    attacked: bool,
    entropy: &'a Entropy,
    ch: Channel,
    sent: Vec<WireMessage>,
}

impl<'a> Flow<'a> {
    fn new(
        module: ModuleId,
        input: &StudentInput,
        narrative: &'a Narrative,
        attacked: bool,
        entropy: &'a Entropy,
    ) -> Result<Self, ScenarioError> {
        let payload = match (module.takes_credentials(), input) {
            (false, StudentInput::Message(m)) if !m.as_str().is_empty() => Payload::Text(m.clone()),
            (true, StudentInput::Credentials(c)) => Payload::Login(c.clone()),
            (false, _) => {
                return Err(ScenarioError::InputMismatch {
                    module,
                    expected: "a non-empty message",
                })
            }
            (true, _) => {
                return Err(ScenarioError::InputMismatch {
                    module,
                    expected: "a username and password",
                })
            }
        };
        Ok(Flow {
            module,
            payload,
            narrative,
            attacked,
            entropy,
            ch: Channel::new(),
            sent: Vec::new(),
        })
    }

    fn text(&self) -> &Message {
        match &self.payload {
            Payload::Text(m) => m,
            Payload::Login(_) => unreachable!("checked in Flow::new"),
        }
    }

    fn login(&self) -> &Credentials {
        match &self.payload {
            Payload::Login(c) => c,
            Payload::Text(_) => unreachable!("checked in Flow::new"),
        }
    }

    fn attack_or_pass(&self, behavior: AttackerBehavior) -> AttackerBehavior {
        if self.attacked {
            behavior
        } else {
            AttackerBehavior::PassThrough
        }
    }

    fn send(&mut self, msg: WireMessage, behavior: AttackerBehavior) -> Result<WireMessage, ScenarioError> {
        let (from, to) = self.module.parties();
        self.send_between(from, to, msg, behavior)
    }

    fn send_between(
        &mut self,
        from: PartyId,
        to: PartyId,
        msg: WireMessage,
        behavior: AttackerBehavior,
    ) -> Result<WireMessage, ScenarioError> {
        let delivered = self.ch.transmit(from, to, &msg, &behavior)?;
        self.sent.push(msg);
        Ok(delivered)
    }

    fn receiver(&self) -> PartyId {
        self.module.parties().1
    }

    fn note(&mut self, kind: EventKind, detail: impl Into<String>, payload: &str) {
        let who = self.receiver();
        self.ch.record(who, kind, detail, payload);
    }

    fn finish(self, outcome: Outcome) -> SimulationRun {
        let attacker_view = self.ch.attacker_view().to_vec();
        let outcome = if self.ch.events().iter().any(|e| e.kind == EventKind::DecryptedByAttacker) {
            Outcome::Compromised
        } else {
            outcome
        };
        SimulationRun {
            trace: self.ch.finish(outcome),
            sent: self.sent,
            attacker_view,
        }
    }

    fn option(self, option: u8) -> Result<SimulationRun, ScenarioError> {
        match (self.module, option) {
            (ModuleId::Hashing, 1) => self.hash_plain(),
            (ModuleId::Hashing, 2) => self.hash_only(),
            (ModuleId::Hashing, 3) => self.hash_envelope(),
            (ModuleId::Symmetric, 1) => self.sym_envelope(),
            (ModuleId::Symmetric, 2) => self.sym_encrypted_envelope(),
            (ModuleId::Symmetric, 3) => self.sym_hash_keyed(),
            (ModuleId::Asymmetric, 1) => self.asym_shared_key(),
            (ModuleId::Asymmetric, 2) => self.asym_sealed(false),
            (ModuleId::Asymmetric, 3) => self.asym_sealed(true),
            (_, other) => Err(ScenarioError::InvalidOption(other)),
        }
    }

    // Hashing ---------------------------------------------------------------

    fn hash_plain(mut self) -> Result<SimulationRun, ScenarioError> {
        let m = WireMessage::plain(self.text());
        let b = self.attack_or_pass(AttackerBehavior::ReplacePlainText {
            new: self.narrative.attacker_text.clone(),
        });
        let got = self.send(m, b)?;
        self.note(EventKind::Accepted, "The portal takes the application as it is. It has no way to check it.", &got.payload);
        Ok(self.finish(Outcome::Accepted))
    }

    fn hash_only(mut self) -> Result<SimulationRun, ScenarioError> {
        let m = WireMessage::hash_only(&crypto::hash(self.text()));
        let b = self.attack_or_pass(AttackerBehavior::Observe);
        let got = self.send(m, b)?;
        self.note(
            EventKind::ParseFailed,
            "The portal got only a hash. A hash cannot be turned back into the application.",
            &got.payload,
        );
        Ok(self.finish(Outcome::ParseError))
    }

    fn hash_envelope(mut self) -> Result<SimulationRun, ScenarioError> {
        let m = WireMessage::envelope(&make_envelope(self.text().clone()));
        let b = self.attack_or_pass(AttackerBehavior::ReplacePlainText {
            new: self.narrative.attacker_text.clone(),
        });
        let got = self.send(m, b)?;
        let outcome = self.verify_envelope(&got);
        Ok(self.finish(outcome))
    }

    fn verify_envelope(&mut self, got: &WireMessage) -> Outcome {
        match got.as_envelope() {
            Err(e) => {
                self.note(EventKind::ParseFailed, format!("The message cannot be read: {e}"), &got.payload);
                self.note(EventKind::Rejected, "The message is turned away.", &got.payload);
                Outcome::Rejected
            }
            Ok(env) => self.verify_parsed(&env, &got.payload),
        }
    }

    fn verify_parsed(&mut self, env: &Envelope, payload: &str) -> Outcome {
        let who = self.receiver();
        match env.verify() {
            Verification::Accept => {
                self.note(EventKind::VerifyPassed, format!("{who} makes the hash again. It matches."), payload);
                self.note(EventKind::Accepted, format!("{who} accepts: \"{}\"", env.body), payload);
                Outcome::Accepted
            }
            Verification::RejectTampered => {
                self.note(
                    EventKind::VerifyFailed,
                    format!("{who} makes the hash again. It does not match, so the message was changed."),
                    payload,
                );
                self.note(EventKind::Rejected, format!("{who} turns the message away."), payload);
                Outcome::Rejected
            }
        }
    }

    // Symmetric -------------------------------------------------------------

    fn sym_envelope(mut self) -> Result<SimulationRun, ScenarioError> {
        let m = WireMessage::envelope(&make_envelope(self.text().clone()));
        let b = self.attack_or_pass(AttackerBehavior::ReplaceEnvelope {
            new: self.narrative.attacker_text.clone(),
        });
        let got = self.send(m, b)?;
        let outcome = self.verify_envelope(&got);
        Ok(self.finish(outcome))
    }

    fn sym_encrypted_envelope(mut self) -> Result<SimulationRun, ScenarioError> {
        let key = shared_key(self.entropy);
        let env = make_envelope(self.text().clone());
        let c = sym_encrypt(&key, env.to_wire().as_bytes(), self.entropy)?;
        let b = self.attack_or_pass(AttackerBehavior::BitFlipCipher { bit: TAMPER_BIT });
        let got = self.send(WireMessage::cipher(c.to_base64()), b)?;
        let outcome = self.open_with_shared_key(&key, &got, true);
        Ok(self.finish(outcome))
    }

    fn sym_hash_keyed(mut self) -> Result<SimulationRun, ScenarioError> {
        let digest = crypto::hash(self.text());
        let hash_key = SymmetricKey::from_bytes(*digest.as_bytes());
        let c = sym_encrypt(&hash_key, self.text().as_bytes(), self.entropy)?;
        let b = self.attack_or_pass(AttackerBehavior::Observe);
        let got = self.send(WireMessage::cipher(c.to_base64()), b)?;
        // Sita only has the key she shares with Mary. The real key is H(M),
        // which she could only compute if she already had M.
        let key = shared_key(self.entropy);
        let outcome = self.open_with_shared_key(&key, &got, false);
        Ok(self.finish(outcome))
    }

    /// Sita decrypts with the pre-shared key, parses the envelope and checks
    /// the hash. A failure is a tamper rejection when `expect_envelope` holds,
    /// otherwise the protocol itself is broken.
    fn open_with_shared_key(&mut self, key: &SymmetricKey, got: &WireMessage, expect_envelope: bool) -> Outcome {
        let opened = got
            .as_sym_cipher()
            .map_err(|e| e.to_string())
            .and_then(|c| sym_decrypt(key, &c).map_err(|e| e.to_string()))
            .and_then(|bytes| String::from_utf8(bytes).map_err(|_| "the result is not text".to_owned()))
            .and_then(|text| Envelope::from_wire(&text).map_err(|e| e.to_string()));
        match opened {
            Ok(env) => {
                let payload = got.payload.clone();
                self.verify_parsed(&env, &payload)
            }
            Err(reason) if expect_envelope => {
                self.note(EventKind::ParseFailed, format!("Sita cannot open the message: {reason}"), &got.payload);
                self.note(EventKind::Rejected, "Sita's app turns the message away.", &got.payload);
                Outcome::Rejected
            }
            Err(reason) => {
                self.note(
                    EventKind::ParseFailed,
                    format!(
                        "Sita cannot open the message ({reason}). It was locked with H(M), and she would need M to make that key."
                    ),
                    &got.payload,
                );
                Outcome::ParseError
            }
        }
    }

    // Asymmetric ------------------------------------------------------------

    fn asym_ideal(mut self) -> Result<SimulationRun, ScenarioError> {
        let key = shared_key(self.entropy);
        let c = sym_encrypt(&key, &self.login().to_plaintext(), self.entropy)?;
        let got = self.send(WireMessage::cipher(c.to_base64()), AttackerBehavior::PassThrough)?;
        let outcome = self.server_opens_symmetric(&key, &got);
        Ok(self.finish(outcome))
    }

    fn asym_shared_key(mut self) -> Result<SimulationRun, ScenarioError> {
        let key = shared_key(self.entropy);
        let steal = self.attack_or_pass(AttackerBehavior::StealKeyThenDecrypt);
        self.send(WireMessage::key_share(&key), steal.clone())?;
        let c = sym_encrypt(&key, &self.login().to_plaintext(), self.entropy)?;
        let got = self.send(WireMessage::cipher(c.to_base64()), steal)?;
        let outcome = self.server_opens_symmetric(&key, &got);
        Ok(self.finish(outcome))
    }

    fn server_opens_symmetric(&mut self, key: &SymmetricKey, got: &WireMessage) -> Outcome {
        let opened = got
            .as_sym_cipher()
            .map_err(|e| e.to_string())
            .and_then(|c| sym_decrypt(key, &c).map_err(|e| e.to_string()))
            .and_then(|b| Credentials::from_plaintext(&b).map_err(|e| e.to_string()));
        match opened {
            Ok(creds) => {
                self.note(
                    EventKind::Accepted,
                    format!("The server opens the message with the shared key and logs in {}.", creds.username),
                    &got.payload,
                );
                Outcome::Accepted
            }
            Err(reason) => {
                self.note(EventKind::ParseFailed, format!("The server cannot open the message: {reason}"), &got.payload);
                Outcome::ParseError
            }
        }
    }

    fn asym_sealed(mut self, to_server: bool) -> Result<SimulationRun, ScenarioError> {
        let aria = aria_keypair(self.entropy)?;
        let server = server_keypair(self.entropy)?;
        let watch = self.attack_or_pass(AttackerBehavior::Observe);
        self.send_between(PartyId::Aria, PartyId::Server, WireMessage::public_key(&aria.public_key), watch.clone())?;
        self.send_between(PartyId::Server, PartyId::Aria, WireMessage::public_key(&server.public_key), watch.clone())?;
        let lock = if to_server { &server.public_key } else { &aria.public_key };
        let sealed = asym_encrypt(lock, &self.login().to_plaintext(), self.entropy)?;
        let got = self.send(WireMessage::cipher(sealed.to_base64()), watch)?;
        let opened = got
            .cipher_base64()
            .map_err(|e| e.to_string())
            .and_then(|b| crypto::SealedCiphertext::from_base64(&b).map_err(|e| e.to_string()))
            .and_then(|c| asym_decrypt(server.private_key(), &c).map_err(|e| e.to_string()))
            .and_then(|b| Credentials::from_plaintext(&b).map_err(|e| e.to_string()));
        let outcome = match opened {
            Ok(creds) => {
                self.note(
                    EventKind::Accepted,
                    format!("The server opens the message with its private key and logs in {}.", creds.username),
                    &got.payload,
                );
                Outcome::Accepted
            }
            Err(_) => {
                self.note(
                    EventKind::ParseFailed,
                    "The server cannot decrypt this. It was locked with Aria's public key, so only Aria's private key opens it.",
                    &got.payload,
                );
                Outcome::ParseError
            }
        };
        Ok(self.finish(outcome))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn text(s: &str) -> StudentInput {
        StudentInput::Message(Message::new(s).unwrap())
    }

    fn login() -> StudentInput {
        StudentInput::Credentials(Credentials::new("aria", "sunflower7").unwrap())
    }

    fn input_for(m: ModuleId) -> StudentInput {
        if m.takes_credentials() {
            login()
        } else {
            text("I got a promotion")
        }
    }

    #[test]
    fn classify_matrix() {
        use Classification::*;
        let expected = [
            (ModuleId::Hashing, [Insecure, Incorrect, Secure]),
            (ModuleId::Symmetric, [Insecure, Secure, Incorrect]),
            (ModuleId::Asymmetric, [Insecure, Incorrect, Secure]),
        ];
        for (m, row) in expected {
            for (i, c) in row.into_iter().enumerate() {
                assert_eq!(classify(m, i as u8 + 1).unwrap().classification, c, "{m} option {}", i + 1);
            }
        }
        assert_eq!(classify(ModuleId::Hashing, 4), Err(ScenarioError::InvalidOption(4)));
    }

    #[test]
    fn symmetric_attack_delivers_sita_message() {
        let lab = Lab::default();
        let run = lab
            .run_experience(ModuleId::Symmetric, true, &text("I got a promotion"), &Entropy::seeded(1))
            .unwrap();
        assert_eq!(run.trace.outcome, Outcome::Accepted);
        let accepted = run.trace.first(EventKind::Accepted).unwrap();
        assert!(accepted.detail.contains("I lost my job, can you transfer money to my account."));
    }

    #[test]
    fn hashing_ideal_has_no_interception() {
        let run = Lab::default()
            .run_experience(ModuleId::Hashing, false, &text("my essay"), &Entropy::seeded(1))
            .unwrap();
        assert_eq!(run.trace.outcome, Outcome::Accepted);
        assert!(!run.trace.has(EventKind::Intercepted));
    }

    #[test]
    fn asymmetric_attack_is_compromised() {
        let run = Lab::default()
            .run_experience(ModuleId::Asymmetric, true, &login(), &Entropy::seeded(1))
            .unwrap();
        assert_eq!(run.trace.outcome, Outcome::Compromised);
        assert!(run.trace.has(EventKind::DecryptedByAttacker));
        run.trace.validate().unwrap();
    }

    #[test]
    fn incorrect_options_fail_at_the_receiver() {
        let lab = Lab::default();
        let e = Entropy::seeded(2);
        for (m, opt) in [(ModuleId::Hashing, 2), (ModuleId::Symmetric, 3), (ModuleId::Asymmetric, 2)] {
            for attacked in [false, true] {
                let (run, _) = lab.run_option(&lab.spec(m, opt, attacked), &input_for(m), &e).unwrap();
                assert_eq!(run.trace.outcome, Outcome::ParseError, "{m} {opt} attacked={attacked}");
                assert_eq!(run.trace.events.last().unwrap().kind, EventKind::ParseFailed);
            }
        }
    }

    #[test]
    fn secure_hashing_unattacked_accepts_attacked_rejects() {
        let lab = Lab::default();
        let e = Entropy::seeded(3);
        let (ok, _) = lab.run_option(&lab.spec(ModuleId::Hashing, 3, false), &text("hi"), &e).unwrap();
        assert_eq!(ok.trace.outcome, Outcome::Accepted);
        assert!(ok.trace.has(EventKind::VerifyPassed));
        let (bad, v) = lab.run_option(&lab.spec(ModuleId::Hashing, 3, true), &text("hi"), &e).unwrap();
        assert_eq!(bad.trace.outcome, Outcome::Rejected);
        assert!(bad.trace.has(EventKind::VerifyFailed));
        assert!(trace_verdict_consistent(&bad.trace, &v));
    }

    #[test]
    fn consistency_examples() {
        let lab = Lab::default();
        let e = Entropy::seeded(4);
        let secure = classify(ModuleId::Hashing, 3).unwrap();
        let (h1, _) = lab.run_option(&lab.spec(ModuleId::Hashing, 1, true), &text("hi"), &e).unwrap();
        assert!(!trace_verdict_consistent(&h1.trace, &secure));
        let (s3, v) = lab.run_option(&lab.spec(ModuleId::Symmetric, 3, true), &text("hi"), &e).unwrap();
        assert!(trace_verdict_consistent(&s3.trace, &v));
    }

    #[test]
    fn wrong_input_type_is_rejected() {
        let lab = Lab::default();
        let e = Entropy::seeded(5);
        assert!(matches!(
            lab.run_experience(ModuleId::Asymmetric, false, &text("hi"), &e),
            Err(ScenarioError::InputMismatch { .. })
        ));
        assert!(matches!(
            lab.run_experience(ModuleId::Hashing, false, &login(), &e),
            Err(ScenarioError::InputMismatch { .. })
        ));
        assert!(matches!(
            lab.run_experience(ModuleId::Symmetric, false, &text(""), &e),
            Err(ScenarioError::InputMismatch { .. })
        ));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let lab = Lab::default();
        for m in ModuleId::ALL {
            for opt in 1..=3 {
                let spec = lab.spec(m, opt, true);
                let a = lab.run_option(&spec, &input_for(m), &Entropy::seeded(8)).unwrap();
                let b = lab.run_option(&spec, &input_for(m), &Entropy::seeded(8)).unwrap();
                assert_eq!(a.0.trace.to_json(), b.0.trace.to_json());
            }
        }
    }

    #[test]
    fn every_trace_is_structurally_valid() {
        let lab = Lab::default();
        let e = Entropy::seeded(9);
        for m in ModuleId::ALL {
            for attacked in [false, true] {
                lab.run_experience(m, attacked, &input_for(m), &e).unwrap().trace.validate().unwrap();
                for opt in 1..=3 {
                    let (run, _) = lab.run_option(&lab.spec(m, opt, attacked), &input_for(m), &e).unwrap();
                    run.trace.validate().unwrap();
                }
            }
        }
    }

    #[test]
    fn ideal_experiences_are_untouched() {
        let lab = Lab::default();
        for m in ModuleId::ALL {
            let run = lab.run_experience(m, false, &input_for(m), &Entropy::seeded(10)).unwrap();
            assert!(!run.trace.has(EventKind::Intercepted) && !run.trace.has(EventKind::Modified));
            assert_eq!(run.trace.outcome, Outcome::Accepted);
        }
    }

    #[test]
    fn student_input_json_shapes() {
        let m: StudentInput = serde_json::from_str(r#""hello""#).unwrap();
        assert_eq!(m, text("hello"));
        let c: StudentInput = serde_json::from_str(r#"{"username":"aria","password":"sunflower7"}"#).unwrap();
        assert_eq!(c, login());
    }
}
