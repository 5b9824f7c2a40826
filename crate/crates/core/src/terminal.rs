//! The embedded practice terminal.
//!
//! Each lesson has a fixed, ordered command list. A session accepts only
//! the next command in that order; anything else gets feedback naming the
//! missing step and leaves the session untouched. The last command sends the
//! secure message for real and returns the trace the UI animates.

use std::fmt::Write as _;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::channel::{AttackerBehavior, Channel, EventKind, EventTrace, Outcome, PartyId, WireMessage};
use crate::crypto::{
    self, asym_decrypt, asym_encrypt, sym_decrypt, sym_encrypt, Credentials, Digest, Envelope, KeyPair,
    Message, PublicKey, SealedCiphertext, SymmetricKey, Verification,
};
use crate::entropy::Entropy;
use crate::scenario::{self, ModuleId, ScenarioError, StudentInput};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Command {
    GenerateHash,
    SendMessageHash,
    GenerateKey,
    EncryptMessage,
    SendEncryptedMessage,
    GenerateAriaPrivateKey,
    GenerateAriaPublicKey,
    GrabServerPublicKey,
    EncryptMessageServerPublicKey,
}

const HASHING: &[Command] = &[Command::GenerateHash, Command::SendMessageHash];
const SYMMETRIC: &[Command] = &[Command::GenerateKey, Command::EncryptMessage, Command::SendEncryptedMessage];
const ASYMMETRIC: &[Command] = &[
    Command::GenerateAriaPrivateKey,
    Command::GenerateAriaPublicKey,
    Command::GrabServerPublicKey,
    Command::EncryptMessageServerPublicKey,
    Command::SendEncryptedMessage,
];

/// Commands a module accepts, in the order they must run.
pub fn grammar(module: ModuleId) -> &'static [Command] {
    match module {
        ModuleId::Hashing => HASHING,
        ModuleId::Symmetric => SYMMETRIC,
        ModuleId::Asymmetric => ASYMMETRIC,
    }
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenerateHash => "generateHash",
            Command::SendMessageHash => "sendMessageHash",
            Command::GenerateKey => "generateKey",
            Command::EncryptMessage => "encryptMessage",
            Command::SendEncryptedMessage => "sendEncryptedMessage",
            Command::GenerateAriaPrivateKey => "generateAriaPrivateKey",
            Command::GenerateAriaPublicKey => "generateAriaPublicKey",
            Command::GrabServerPublicKey => "grabServerPublicKey",
            Command::EncryptMessageServerPublicKey => "encryptMessageServerPublicKey",
        }
    }

    fn describe(self, module: ModuleId) -> &'static str {
        match (self, module) {
            (Command::GenerateHash, _) => "Make the hash H(M) of your message.",
            (Command::SendMessageHash, _) => "Send the message and its hash (M, H(M)) to the portal.",
            (Command::GenerateKey, _) => "Make a secret key K that you share with Sita.",
            (Command::EncryptMessage, _) => "Lock the message and its hash with the key: C = E(K, M^H).",
            (Command::SendEncryptedMessage, ModuleId::Asymmetric) => "Send the locked login to the server.",
            (Command::SendEncryptedMessage, _) => "Send the locked message C to Sita.",
            (Command::GenerateAriaPrivateKey, _) => "Make Aria's private key. Keep it secret.",
            (Command::GenerateAriaPublicKey, _) => "Make Aria's public key from her private key.",
            (Command::GrabServerPublicKey, _) => "Get the server's public key.",
            (Command::EncryptMessageServerPublicKey, _) => "Lock the login with the server's public key.",
        }
    }

    /// What this command leaves behind, and how to ask for it.
    fn produces(self) -> (&'static str, &'static str) {
        match self {
            Command::GenerateHash => ("hash of your message", "generate the hash"),
            Command::GenerateKey => ("key for encryption", "generate a key"),
            Command::EncryptMessage => ("encrypted message", "encrypt the message"),
            Command::GenerateAriaPrivateKey => ("private key for Aria", "generate Aria's private key"),
            Command::GenerateAriaPublicKey => ("public key for Aria", "generate Aria's public key"),
            Command::GrabServerPublicKey => ("server public key", "grab the server's public key"),
            Command::EncryptMessageServerPublicKey => (
                "encrypted login",
                "encrypt the login with the server's public key",
            ),
            Command::SendMessageHash | Command::SendEncryptedMessage => ("sent message", "send the message"),
        }
    }

    fn action(self) -> &'static str {
        match self {
            Command::GenerateHash => "the hashing",
            Command::SendMessageHash | Command::SendEncryptedMessage => "the sending",
            Command::GenerateKey => "the key generation",
            Command::EncryptMessage | Command::EncryptMessageServerPublicKey => "the encryption",
            Command::GenerateAriaPrivateKey | Command::GenerateAriaPublicKey => "the key generation",
            Command::GrabServerPublicKey => "the key exchange",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Help,
    Run(Command),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnknownCommand {
    pub token: String,
    pub suggestion: Option<&'static str>,
}

/// Trims the line and matches it exactly (case-sensitive) against the
/// module's commands and `help`.
pub fn parse(module: ModuleId, line: &str) -> Result<Token, UnknownCommand> {
    let token = line.trim();
    if token == "help" {
        return Ok(Token::Help);
    }
    if let Some(cmd) = grammar(module).iter().find(|c| c.name() == token) {
        return Ok(Token::Run(*cmd));
    }
    let suggestion = grammar(module)
        .iter()
        .map(|c| c.name())
        .chain(["help"])
        .map(|name| (strsim::levenshtein(token, name), name))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, name)| name);
    Err(UnknownCommand {
        token: token.to_owned(),
        suggestion,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    OrderError,
    UnknownCommand,
    AlreadyDone,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub status: Status,
    pub text: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trace: Option<EventTrace>,
}

impl Feedback {
    fn new(status: Status, text: impl Into<String>) -> Self {
        Feedback {
            status,
            text: text.into(),
            trace: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub line: String,
    pub feedback: Feedback,
}

/// Values the commands have produced so far.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifacts {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub digest: Option<Digest>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub key: Option<SymmetricKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ciphertext: Option<WireMessage>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aria_keys: Option<KeyPair>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aria_public: Option<PublicKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub server_public: Option<PublicKey>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sent: Option<WireMessage>,
}

impl Artifacts {
    fn holds(&self, cmd: Command) -> bool {
        match cmd {
            Command::GenerateHash => self.digest.is_some(),
            Command::GenerateKey => self.key.is_some(),
            Command::EncryptMessage | Command::EncryptMessageServerPublicKey => self.ciphertext.is_some(),
            Command::GenerateAriaPrivateKey => self.aria_keys.is_some(),
            Command::GenerateAriaPublicKey => self.aria_public.is_some(),
            Command::GrabServerPublicKey => self.server_public.is_some(),
            Command::SendMessageHash | Command::SendEncryptedMessage => self.sent.is_some(),
        }
    }
}

/// Result of running every permutation of a module's commands.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct OrderingReport {
    pub module: ModuleId,
    pub total: usize,
    pub successes: Vec<Vec<Command>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminalSession {
    module: ModuleId,
    input: StudentInput,
    entropy: Entropy,
    completed: Vec<Command>,
    artifacts: Artifacts,
    transcript: Vec<TranscriptEntry>,
}

impl TerminalSession {
    /// Opens a session for `module`, carrying the lesson's message or login.
    pub fn new(module: ModuleId, input: StudentInput, entropy: Entropy) -> Result<Self, ScenarioError> {
        let ok = match &input {
            StudentInput::Message(m) => !module.takes_credentials() && !m.as_str().is_empty(),
            StudentInput::Credentials(_) => module.takes_credentials(),
        };
        if !ok {
            return Err(ScenarioError::InputMismatch {
                module,
                expected: if module.takes_credentials() {
                    "a username and password"
                } else {
                    "a non-empty message"
                },
            });
        }
        Ok(TerminalSession {
            module,
            input,
            entropy,
            completed: Vec::new(),
            artifacts: Artifacts::default(),
            transcript: Vec::new(),
        })
    }

    pub fn module(&self) -> ModuleId {
        self.module
    }

    pub fn completed(&self) -> &[Command] {
        &self.completed
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.artifacts
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn is_complete(&self) -> bool {
        self.completed.len() == grammar(self.module).len()
    }

    /// `completed` is a prefix of the grammar and artifacts match it.
    pub fn invariants_hold(&self) -> bool {
        let g = grammar(self.module);
        self.completed.len() <= g.len()
            && self.completed[..] == g[..self.completed.len()]
            && g.iter().all(|c| self.completed.contains(c) == self.artifacts.holds(*c))
    }

    pub fn help(&self) -> String {
        let mut out = String::from("Run these commands in order:\n");
        for (i, cmd) in grammar(self.module).iter().enumerate() {
            let _ = writeln!(out, "  {}. {} - {}", i + 1, cmd.name(), cmd.describe(self.module));
        }
        out.push_str("Type help to see this list again.");
        out
    }

    /// Parses, runs and records one typed line.
    pub fn submit(&mut self, line: &str) -> Feedback {
        let feedback = match parse(self.module, line) {
            Ok(token) => self.execute(token),
            Err(unknown) => {
                let mut text = format!("Unknown command \"{}\".", unknown.token);
                if let Some(s) = unknown.suggestion {
                    let _ = write!(text, " Did you mean {s}?");
                }
                text.push_str(" Type help to see the commands.");
                Feedback::new(Status::UnknownCommand, text)
            }
        };
        self.transcript.push(TranscriptEntry {
            line: line.to_owned(),
            feedback: feedback.clone(),
        });
        feedback
    }

    pub fn execute(&mut self, token: Token) -> Feedback {
        let cmd = match token {
            Token::Help => return Feedback::new(Status::Ok, self.help()),
            Token::Run(cmd) => cmd,
        };
        let g = grammar(self.module);
        if self.completed.contains(&cmd) {
            let text = match g.get(self.completed.len()) {
                Some(next) => format!("You already ran {}. Try {} next.", cmd.name(), next.name()),
                None => format!("You already ran {}. All steps are done.", cmd.name()),
            };
            return Feedback::new(Status::AlreadyDone, text);
        }
        let next = g[self.completed.len()];
        if cmd != next {
            let (artifact, produce) = next.produces();
            return Feedback::new(
                Status::OrderError,
                format!("There is no {artifact}. Please {produce} to perform {}", cmd.action()),
            );
        }
        match self.perform(cmd) {
            Ok(feedback) => {
                self.completed.push(cmd);
                feedback
            }
            // Primitive failures here mean bad lesson input (e.g. a login too
            // long for one RSA block); the step stays pending.
            Err(e) => Feedback::new(Status::OrderError, format!("That did not work: {e}")),
        }
    }

    fn message(&self) -> &Message {
        match &self.input {
            StudentInput::Message(m) => m,
            StudentInput::Credentials(_) => unreachable!("checked in new"),
        }
    }

    fn login(&self) -> &Credentials {
        match &self.input {
            StudentInput::Credentials(c) => c,
            StudentInput::Message(_) => unreachable!("checked in new"),
        }
    }

    fn perform(&mut self, cmd: Command) -> Result<Feedback, ScenarioError> {
        let a = &mut self.artifacts;
        let text = match (cmd, self.module) {
            (Command::GenerateHash, _) => {
                let d = crypto::hash(match &self.input {
                    StudentInput::Message(m) => m,
                    StudentInput::Credentials(_) => unreachable!("checked in new"),
                });
                a.digest = Some(d);
                format!("Hash generated: {d}")
            }
            (Command::GenerateKey, _) => {
                let k = scenario::shared_key(&self.entropy);
                let text = format!("Key generated: {}", k.id());
                a.key = Some(k);
                text
            }
            (Command::EncryptMessage, _) => {
                let key = a.key.as_ref().expect("ordered after generateKey");
                let m = match &self.input {
                    StudentInput::Message(m) => m.clone(),
                    StudentInput::Credentials(_) => unreachable!("checked in new"),
                };
                let c = sym_encrypt(key, Envelope::seal(m).to_wire().as_bytes(), &self.entropy)?;
                let wire = WireMessage::cipher(c.to_base64());
                let text = format!("Message encrypted: {}", crate::channel::preview(&c.to_base64()));
                a.ciphertext = Some(wire);
                text
            }
            (Command::GenerateAriaPrivateKey, _) => {
                a.aria_keys = Some(scenario::aria_keypair(&self.entropy)?);
                "Aria's private key is ready. Keep it secret.".to_owned()
            }
            (Command::GenerateAriaPublicKey, _) => {
                let pk = a.aria_keys.as_ref().expect("ordered").private_key().public_key();
                let text = format!("Aria's public key: {}", pk.fingerprint());
                a.aria_public = Some(pk);
                text
            }
            (Command::GrabServerPublicKey, _) => {
                let pk = scenario::server_keypair(&self.entropy)?.public_key;
                let text = format!("Server public key: {}", pk.fingerprint());
                a.server_public = Some(pk);
                text
            }
            (Command::EncryptMessageServerPublicKey, _) => {
                let pk = a.server_public.as_ref().expect("ordered");
                let login = match &self.input {
                    StudentInput::Credentials(c) => c.to_plaintext(),
                    StudentInput::Message(_) => unreachable!("checked in new"),
                };
                let sealed = asym_encrypt(pk, &login, &self.entropy)?;
                let text = format!(
                    "Login encrypted with the server's public key: {}",
                    crate::channel::preview(&sealed.to_base64())
                );
                a.ciphertext = Some(WireMessage::cipher(sealed.to_base64()));
                text
            }
            (Command::SendMessageHash, _) | (Command::SendEncryptedMessage, _) => return self.send(),
        };
        Ok(Feedback::new(Status::Ok, text))
    }

    fn send(&mut self) -> Result<Feedback, ScenarioError> {
        let (from, to) = self.module.parties();
        let wire = match self.module {
            ModuleId::Hashing => WireMessage::envelope(&Envelope {
                body: self.message().clone(),
                digest: self.artifacts.digest.expect("ordered"),
            }),
            _ => self.artifacts.ciphertext.clone().expect("ordered"),
        };
        let mut ch = Channel::new();
        let got = ch.transmit(from, to, &wire, &AttackerBehavior::PassThrough)?;
        let (outcome, text) = match self.module {
            ModuleId::Hashing => {
                let env = got.as_envelope()?;
                receive_envelope(&mut ch, to, &env, &got.payload);
                (
                    Outcome::Accepted,
                    "Message and hash sent. The portal made the hash again, it matched, and your application was accepted.",
                )
            }
            ModuleId::Symmetric => {
                let key = self.artifacts.key.as_ref().expect("ordered");
                let plain = sym_decrypt(key, &got.as_sym_cipher()?)?;
                let env = Envelope::from_wire(&String::from_utf8_lossy(&plain))?;
                receive_envelope(&mut ch, to, &env, &got.payload);
                (
                    Outcome::Accepted,
                    "Encrypted message sent. Sita opened it with the shared key, checked the hash and accepted it.",
                )
            }
            ModuleId::Asymmetric => {
                let server = scenario::server_keypair(&self.entropy)?;
                let sealed = SealedCiphertext::from_base64(&got.cipher_base64()?)?;
                let login = Credentials::from_plaintext(&asym_decrypt(server.private_key(), &sealed)?)?;
                debug_assert_eq!(&login, self.login());
                ch.record(
                    to,
                    EventKind::Accepted,
                    format!("The server opens the message with its private key and logs in {}.", login.username),
                    &got.payload,
                );
                (
                    Outcome::Accepted,
                    "Encrypted login sent. Only the server's private key can open it, and the server logged Aria in.",
                )
            }
        };
        self.artifacts.sent = Some(wire);
        Ok(Feedback {
            status: Status::Ok,
            text: text.to_owned(),
            trace: Some(ch.finish(outcome)),
        })
    }
}

fn receive_envelope(ch: &mut Channel, who: PartyId, env: &Envelope, payload: &str) {
    debug_assert_eq!(env.verify(), Verification::Accept);
    ch.record(who, EventKind::VerifyPassed, format!("{who} makes the hash again. It matches."), payload);
    ch.record(who, EventKind::Accepted, format!("{who} accepts: \"{}\"", env.body), payload);
}

/// Runs every ordering of the module's commands on a fresh session and
/// reports which ones reach the end with every step accepted.
pub fn enumerate_orderings(module: ModuleId, input: &StudentInput, entropy: &Entropy) -> OrderingReport {
    let g = grammar(module);
    let mut total = 0;
    let mut successes = Vec::new();
    for order in g.iter().copied().permutations(g.len()) {
        total += 1;
        let mut session = TerminalSession::new(module, input.clone(), entropy.clone())
            .expect("caller supplies input matching the module");
        let mut all_ok = true;
        let mut final_trace = None;
        for cmd in &order {
            let fb = session.submit(cmd.name());
            all_ok &= fb.status == Status::Ok;
            final_trace = fb.trace;
        }
        if all_ok && session.is_complete() && final_trace.is_some() {
            successes.push(order);
        }
    }
    OrderingReport {
        module,
        total,
        successes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Lab;
    use proptest::prelude::*;

    fn input(m: ModuleId) -> StudentInput {
        if m.takes_credentials() {
            StudentInput::Credentials(Credentials::new("aria", "sunflower7").unwrap())
        } else {
            StudentInput::Message(Message::new("I got a promotion").unwrap())
        }
    }

    fn session(m: ModuleId) -> TerminalSession {
        TerminalSession::new(m, input(m), Entropy::seeded(42)).unwrap()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse(ModuleId::Symmetric, "generateKey"), Ok(Token::Run(Command::GenerateKey)));
        assert_eq!(parse(ModuleId::Symmetric, "  help  "), Ok(Token::Help));
        let err = parse(ModuleId::Symmetric, "generatekey").unwrap_err();
        assert_eq!(err.token, "generatekey");
        assert_eq!(err.suggestion, Some("generateKey"));
        // another module's command is not in this grammar
        assert!(parse(ModuleId::Hashing, "generateKey").is_err());
        assert_eq!(parse(ModuleId::Hashing, "xyzzy").unwrap_err().suggestion, None);
    }

    #[test]
    fn out_of_order_encrypt_gets_verbatim_feedback() {
        let mut s = session(ModuleId::Symmetric);
        let fb = s.submit("encryptMessage");
        assert_eq!(fb.status, Status::OrderError);
        assert_eq!(
            fb.text,
            "There is no key for encryption. Please generate a key to perform the encryption"
        );
        assert!(s.completed().is_empty());
    }

    #[test]
    fn symmetric_happy_path_ends_with_accepted_trace() {
        let mut s = session(ModuleId::Symmetric);
        assert_eq!(s.submit("generateKey").status, Status::Ok);
        assert_eq!(s.submit("encryptMessage").status, Status::Ok);
        let fb = s.submit("sendEncryptedMessage");
        assert_eq!(fb.status, Status::Ok);
        let trace = fb.trace.unwrap();
        assert_eq!(trace.outcome, Outcome::Accepted);
        trace.validate().unwrap();
        assert!(s.is_complete());
    }

    #[test]
    fn hashing_send_before_hash_names_the_digest() {
        let mut s = session(ModuleId::Hashing);
        let fb = s.submit("sendMessageHash");
        assert_eq!(fb.status, Status::OrderError);
        assert!(fb.text.contains("hash of your message"), "{}", fb.text);
    }

    #[test]
    fn repeated_command_is_already_done() {
        let mut s = session(ModuleId::Hashing);
        s.submit("generateHash");
        let before = s.artifacts().clone();
        assert_eq!(s.submit("generateHash").status, Status::AlreadyDone);
        assert_eq!(s.artifacts(), &before);
    }

    #[test]
    fn help_lists_asymmetric_commands_in_order_and_is_pure() {
        let s = session(ModuleId::Asymmetric);
        let h = s.help();
        let positions: Vec<usize> = ASYMMETRIC.iter().map(|c| h.find(c.name()).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(h, s.help());
        let mut s2 = s.clone();
        assert_eq!(s2.submit("help").status, Status::Ok);
        assert_eq!(s2.completed(), s.completed());
    }

    #[test]
    fn orderings_have_one_winner() {
        for (m, total) in [(ModuleId::Hashing, 2), (ModuleId::Symmetric, 6), (ModuleId::Asymmetric, 120)] {
            let report = enumerate_orderings(m, &input(m), &Entropy::seeded(1));
            assert_eq!(report.total, total);
            assert_eq!(report.successes, vec![grammar(m).to_vec()]);
        }
    }

    #[test]
    fn final_send_matches_secure_option_wire() {
        let lab = Lab::default();
        for (m, secure) in [(ModuleId::Hashing, 3), (ModuleId::Symmetric, 2), (ModuleId::Asymmetric, 3)] {
            let e = Entropy::seeded(77);
            let mut s = TerminalSession::new(m, input(m), e.clone()).unwrap();
            for c in grammar(m) {
                assert_eq!(s.submit(c.name()).status, Status::Ok);
            }
            let (run, _) = lab.run_option(&lab.spec(m, secure, false), &input(m), &e).unwrap();
            assert_eq!(s.artifacts().sent.as_ref(), run.sent.last(), "{m}");
        }
    }

    #[test]
    fn wrong_input_type_rejected() {
        assert!(TerminalSession::new(ModuleId::Asymmetric, input(ModuleId::Hashing), Entropy::seeded(1)).is_err());
        assert!(TerminalSession::new(ModuleId::Hashing, input(ModuleId::Asymmetric), Entropy::seeded(1)).is_err());
    }

    #[test]
    fn session_round_trips_through_json() {
        let mut s = session(ModuleId::Asymmetric);
        s.submit("generateAriaPrivateKey");
        s.submit("generateAriaPublicKey");
        let back: TerminalSession = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    fn line_strategy(m: ModuleId) -> impl Strategy<Value = String> {
        let mut names: Vec<String> = grammar(m).iter().map(|c| c.name().to_owned()).collect();
        names.extend(["help".into(), "generatekey".into(), "".into(), "rm -rf".into()]);
        proptest::sample::select(names)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prefix_invariant_symmetric(lines in proptest::collection::vec(line_strategy(ModuleId::Symmetric), 0..12)) {
            let mut s = session(ModuleId::Symmetric);
            for l in &lines {
                let before = (s.completed().to_vec(), s.artifacts().clone());
                let fb = s.submit(l);
                if matches!(fb.status, Status::OrderError | Status::UnknownCommand | Status::AlreadyDone) {
                    prop_assert_eq!(&before, &(s.completed().to_vec(), s.artifacts().clone()));
                }
                prop_assert_eq!(fb.trace.is_some(), fb.status == Status::Ok && s.is_complete() && s.completed().last().map(|c| c.name()) == Some(l.trim()));
                prop_assert!(s.invariants_hold());
            }
        }

        #[test]
        fn prefix_invariant_hashing(lines in proptest::collection::vec(line_strategy(ModuleId::Hashing), 0..8)) {
            let mut s = session(ModuleId::Hashing);
            for l in &lines {
                s.submit(l);
                prop_assert!(s.invariants_hold());
            }
        }
    }

    #[test]
    fn prefix_invariant_asymmetric_random_streams() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let names: Vec<&str> = ASYMMETRIC.iter().map(|c| c.name()).chain(["help", "nope"]).collect();
        for _ in 0..40 {
            let mut s = session(ModuleId::Asymmetric);
            for _ in 0..10 {
                let before = (s.completed().to_vec(), s.artifacts().clone());
                let fb = s.submit(names[rng.gen_range(0..names.len())]);
                if fb.status != Status::Ok {
                    assert_eq!(before, (s.completed().to_vec(), s.artifacts().clone()));
                }
                assert!(s.invariants_hold());
            }
        }
    }
}
