//! The simulated wire between two parties and the attacker sitting on it.
//!
//! A [`Channel`] records every step of a run as a [`TraceEvent`]; the
//! finished [`EventTrace`] is what the UI animates and what the service
//! stores. The attacker is a fixed transformation chosen per transmission,
//! never an adaptive agent, so every run is reproducible.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{
    self, CipherRecord, Ciphertext, CryptoError, Envelope, HashRecord, Message, PublicKey,
    SymmetricKey,
};

/// Characters kept in an event's payload preview.
pub const PREVIEW_CHARS: usize = 48;
const ELLIPSIS: char = '…';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyId {
    Student,
    Peter,
    Mary,
    Sita,
    Aria,
    Server,
    UniversityPortal,
    Attacker,
}

impl PartyId {
    pub fn as_str(self) -> &'static str {
        match self {
            PartyId::Student => "student",
            PartyId::Peter => "peter",
            PartyId::Mary => "mary",
            PartyId::Sita => "sita",
            PartyId::Aria => "aria",
            PartyId::Server => "server",
            PartyId::UniversityPortal => "university_portal",
            PartyId::Attacker => "attacker",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            PartyId::Student => "Student",
            PartyId::Peter => "Peter",
            PartyId::Mary => "Mary",
            PartyId::Sita => "Sita",
            PartyId::Aria => "Aria",
            PartyId::Server => "Server",
            PartyId::UniversityPortal => "University portal",
            PartyId::Attacker => "Attacker",
        }
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.display_name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireKind {
    PlainText,
    HashOnly,
    EnvelopePlain,
    CipherText,
    PublicKey,
    SymmetricKeyShare,
}

impl WireKind {
    pub const ALL: [WireKind; 6] = [
        WireKind::PlainText,
        WireKind::HashOnly,
        WireKind::EnvelopePlain,
        WireKind::CipherText,
        WireKind::PublicKey,
        WireKind::SymmetricKeyShare,
    ];

    fn noun(self) -> &'static str {
        match self {
            WireKind::PlainText => "plain text message",
            WireKind::HashOnly => "hash",
            WireKind::EnvelopePlain => "message and hash",
            WireKind::CipherText => "encrypted message",
            WireKind::PublicKey => "public key",
            WireKind::SymmetricKeyShare => "shared secret key",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("payload does not parse as {kind:?}: {source}")]
    BadPayload {
        kind: WireKind,
        #[source]
        source: CryptoError,
    },
    #[error("attacker behavior {behavior} cannot act on a {kind:?} message")]
    IllegalBehavior { behavior: &'static str, kind: WireKind },
    #[error("the attacker is never a legitimate endpoint")]
    AttackerEndpoint,
    #[error("inconsistent key-theft session: {0}")]
    Inconsistent(String),
}

/// A serialized payload tagged with its format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireMessage {
    pub kind: WireKind,
    pub payload: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PublicKeyRecord {
    public_key: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyShareRecord {
    key: String,
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("wire records serialize")
}

impl WireMessage {
    /// Builds a message after checking the payload parses as `kind`.
    pub fn new(kind: WireKind, payload: impl Into<String>) -> Result<Self, ChannelError> {
        let msg = WireMessage {
            kind,
            payload: payload.into(),
        };
        msg.check()?;
        Ok(msg)
    }

    pub fn plain(m: &Message) -> Self {
        WireMessage {
            kind: WireKind::PlainText,
            payload: m.as_str().to_owned(),
        }
    }

    pub fn hash_only(d: &crypto::Digest) -> Self {
        WireMessage {
            kind: WireKind::HashOnly,
            payload: json(&HashRecord { digest: *d }),
        }
    }

    pub fn envelope(e: &Envelope) -> Self {
        WireMessage {
            kind: WireKind::EnvelopePlain,
            payload: e.to_wire(),
        }
    }

    /// Any base64 ciphertext, symmetric or RSA.
    pub fn cipher(base64: String) -> Self {
        WireMessage {
            kind: WireKind::CipherText,
            payload: json(&CipherRecord { cipher: base64 }),
        }
    }

    pub fn public_key(k: &PublicKey) -> Self {
        WireMessage {
            kind: WireKind::PublicKey,
            payload: json(&PublicKeyRecord {
                public_key: k.to_base64(),
            }),
        }
    }

    pub fn key_share(k: &SymmetricKey) -> Self {
        WireMessage {
            kind: WireKind::SymmetricKeyShare,
            payload: json(&KeyShareRecord { key: k.to_base64() }),
        }
    }

    fn bad(&self, source: CryptoError) -> ChannelError {
        ChannelError::BadPayload {
            kind: self.kind,
            source,
        }
    }

    fn record<'a, T: Deserialize<'a>>(&'a self, what: &'static str) -> Result<T, ChannelError> {
        serde_json::from_str(&self.payload).map_err(|e| {
            self.bad(CryptoError::Malformed {
                what,
                reason: e.to_string(),
            })
        })
    }

    pub fn check(&self) -> Result<(), ChannelError> {
        match self.kind {
            WireKind::PlainText => Message::new(self.payload.clone())
                .map(drop)
                .map_err(|e| self.bad(e)),
            WireKind::HashOnly => self.as_hash().map(drop),
            WireKind::EnvelopePlain => self.as_envelope().map(drop),
            WireKind::CipherText => self.cipher_base64().map(drop),
            WireKind::PublicKey => self.as_public_key().map(drop),
            WireKind::SymmetricKeyShare => self.as_key_share().map(drop),
        }
    }

    pub fn as_text(&self) -> Result<Message, ChannelError> {
        if self.kind != WireKind::PlainText {
            return Err(self.bad(CryptoError::Malformed {
                what: "plain text",
                reason: format!("payload is a {}", self.kind.noun()),
            }));
        }
        Message::new(self.payload.clone()).map_err(|e| self.bad(e))
    }

    pub fn as_hash(&self) -> Result<crypto::Digest, ChannelError> {
        self.record::<HashRecord>("hash record").map(|r| r.digest)
    }

    pub fn as_envelope(&self) -> Result<Envelope, ChannelError> {
        Envelope::from_wire(&self.payload).map_err(|e| self.bad(e))
    }

    /// The base64 text inside a ciphertext record.
    pub fn cipher_base64(&self) -> Result<String, ChannelError> {
        let rec = self.record::<CipherRecord>("ciphertext record")?;
        use base64::Engine as _;
        base64::engine::general_purpose::STANDARD
            .decode(&rec.cipher)
            .map_err(|e| {
                self.bad(CryptoError::Malformed {
                    what: "ciphertext",
                    reason: e.to_string(),
                })
            })?;
        Ok(rec.cipher)
    }

    pub fn as_sym_cipher(&self) -> Result<Ciphertext, ChannelError> {
        Ciphertext::from_base64(&self.cipher_base64()?).map_err(|e| self.bad(e))
    }

    pub fn as_public_key(&self) -> Result<PublicKey, ChannelError> {
        let rec = self.record::<PublicKeyRecord>("public key record")?;
        PublicKey::from_base64(&rec.public_key).map_err(|e| self.bad(e))
    }

    pub fn as_key_share(&self) -> Result<SymmetricKey, ChannelError> {
        let rec = self.record::<KeyShareRecord>("key share record")?;
        SymmetricKey::from_base64(&rec.key).map_err(|e| self.bad(e))
    }
}

/// What the attacker does to one transmission.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum AttackerBehavior {
    PassThrough,
    /// Replaces plain text; on an envelope, replaces the body and leaves the
    /// original digest in place.
    ReplacePlainText { new: Message },
    /// Replaces an envelope's body and recomputes its digest.
    ReplaceEnvelope { new: Message },
    /// Flips one bit of the raw `iv ∥ payload` bytes.
    BitFlipCipher { bit: usize },
    /// Copies a shared key in transit, then decrypts later ciphertexts with it.
    StealKeyThenDecrypt,
    Observe,
}

impl AttackerBehavior {
    pub fn name(&self) -> &'static str {
        match self {
            AttackerBehavior::PassThrough => "pass_through",
            AttackerBehavior::ReplacePlainText { .. } => "replace_plain_text",
            AttackerBehavior::ReplaceEnvelope { .. } => "replace_envelope",
            AttackerBehavior::BitFlipCipher { .. } => "bit_flip_cipher",
            AttackerBehavior::StealKeyThenDecrypt => "steal_key_then_decrypt",
            AttackerBehavior::Observe => "observe",
        }
    }

    pub fn applies_to(&self, kind: WireKind) -> bool {
        use AttackerBehavior as B;
        match self {
            B::PassThrough | B::Observe => true,
            B::ReplacePlainText { .. } => {
                matches!(kind, WireKind::PlainText | WireKind::EnvelopePlain)
            }
            B::ReplaceEnvelope { .. } => kind == WireKind::EnvelopePlain,
            B::BitFlipCipher { .. } => kind == WireKind::CipherText,
            B::StealKeyThenDecrypt => {
                matches!(kind, WireKind::SymmetricKeyShare | WireKind::CipherText)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Typed,
    Sent,
    Intercepted,
    Modified,
    KeyStolen,
    DecryptedByAttacker,
    Delivered,
    ParseFailed,
    VerifyPassed,
    VerifyFailed,
    Accepted,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub actor: PartyId,
    pub kind: EventKind,
    pub detail: String,
    pub payload_preview: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Accepted,
    Rejected,
    ParseError,
    Compromised,
    /// The transfer finished but no receiver has judged it yet.
    Delivered,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventTrace {
    pub events: Vec<TraceEvent>,
    pub outcome: Outcome,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TraceError {
    #[error("sequence numbers must strictly increase (at index {0})")]
    SeqOrder(usize),
    #[error("send at seq {0} is not followed by exactly one delivery")]
    UndeliveredSend(u64),
    #[error("outcome {0:?} does not match the trace's terminal events")]
    OutcomeMismatch(Outcome),
    #[error("trace does not parse: {0}")]
    Parse(String),
}

impl EventTrace {
    pub fn has(&self, kind: EventKind) -> bool {
        self.events.iter().any(|e| e.kind == kind)
    }

    pub fn first(&self, kind: EventKind) -> Option<&TraceEvent> {
        self.events.iter().find(|e| e.kind == kind)
    }

    pub fn position(&self, kind: EventKind) -> Option<usize> {
        self.events.iter().position(|e| e.kind == kind)
    }

    pub fn kinds(&self) -> Vec<EventKind> {
        self.events.iter().map(|e| e.kind).collect()
    }

    /// Checks the structural invariants: strictly increasing `seq`, every
    /// `Sent` closed by one `Delivered` before the next `Sent`, and an
    /// outcome that agrees with the terminal events.
    pub fn validate(&self) -> Result<(), TraceError> {
        for (i, pair) in self.events.windows(2).enumerate() {
            if pair[1].seq <= pair[0].seq {
                return Err(TraceError::SeqOrder(i + 1));
            }
        }
        let mut open: Option<u64> = None;
        for e in &self.events {
            match e.kind {
                EventKind::Sent => {
                    if let Some(seq) = open {
                        return Err(TraceError::UndeliveredSend(seq));
                    }
                    open = Some(e.seq);
                }
                EventKind::Delivered => {
                    open.take().ok_or(TraceError::UndeliveredSend(e.seq))?;
                }
                _ => {}
            }
        }
        if let Some(seq) = open {
            return Err(TraceError::UndeliveredSend(seq));
        }
        let last = self.events.last().map(|e| e.kind);
        let consistent = match self.outcome {
            Outcome::Compromised => self.has(EventKind::DecryptedByAttacker),
            _ if self.has(EventKind::DecryptedByAttacker) => false,
            Outcome::Accepted => last == Some(EventKind::Accepted),
            Outcome::Rejected => last == Some(EventKind::Rejected),
            Outcome::ParseError => last == Some(EventKind::ParseFailed),
            Outcome::Delivered => last == Some(EventKind::Delivered),
        };
        if consistent {
            Ok(())
        } else {
            Err(TraceError::OutcomeMismatch(self.outcome))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }

    /// Parses and validates a stored trace.
    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        let trace: EventTrace =
            serde_json::from_str(text).map_err(|e| TraceError::Parse(e.to_string()))?;
        trace.validate()?;
        Ok(trace)
    }
}

pub fn preview(text: &str) -> String {
    let mut chars = text.chars();
    let head: String = chars.by_ref().take(PREVIEW_CHARS).collect();
    if chars.next().is_some() {
        format!("{head}{ELLIPSIS}")
    } else {
        head
    }
}

/// An in-progress simulation: the event log plus what the attacker holds.
#[derive(Debug, Default)]
pub struct Channel {
    events: Vec<TraceEvent>,
    stolen_key: Option<SymmetricKey>,
    attacker_view: Vec<String>,
}

impl Channel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(
        &mut self,
        actor: PartyId,
        kind: EventKind,
        detail: impl Into<String>,
        payload: &str,
    ) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(TraceEvent {
            seq,
            actor,
            kind,
            detail: detail.into(),
            payload_preview: preview(payload),
        });
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn stolen_key(&self) -> Option<&SymmetricKey> {
        self.stolen_key.as_ref()
    }

    /// Full payloads the attacker saw or produced, for confidentiality checks.
    pub fn attacker_view(&self) -> &[String] {
        &self.attacker_view
    }

    /// Sends `msg` from `from` to `to` through `attacker` and returns what
    /// arrives.
    pub fn transmit(
        &mut self,
        from: PartyId,
        to: PartyId,
        msg: &WireMessage,
        attacker: &AttackerBehavior,
    ) -> Result<WireMessage, ChannelError> {
        if from == PartyId::Attacker || to == PartyId::Attacker {
            return Err(ChannelError::AttackerEndpoint);
        }
        msg.check()?;
        if !attacker.applies_to(msg.kind) {
            return Err(ChannelError::IllegalBehavior {
                behavior: attacker.name(),
                kind: msg.kind,
            });
        }
        // Work out the attacker's effect before recording anything, so a
        // failed transmission leaves the trace untouched.
        let effect = self.attack(msg, attacker)?;

        let noun = msg.kind.noun();
        self.record(from, EventKind::Typed, format!("{from} prepares the {noun}"), &msg.payload);
        self.record(from, EventKind::Sent, format!("{from} sends the {noun} to {to}"), &msg.payload);
        let delivered = match effect {
            Effect::None => msg.clone(),
            Effect::Seen { notes } => {
                self.attacker_view.push(msg.payload.clone());
                self.record(
                    PartyId::Attacker,
                    EventKind::Intercepted,
                    format!("The attacker grabs the {noun} on its way to {to}"),
                    &msg.payload,
                );
                for (kind, detail, payload) in notes {
                    self.record(PartyId::Attacker, kind, detail, &payload);
                }
                msg.clone()
            }
            Effect::Changed { replacement, detail } => {
                self.attacker_view.push(msg.payload.clone());
                self.record(
                    PartyId::Attacker,
                    EventKind::Intercepted,
                    format!("The attacker grabs the {noun} on its way to {to}"),
                    &msg.payload,
                );
                self.attacker_view.push(replacement.payload.clone());
                self.record(PartyId::Attacker, EventKind::Modified, detail, &replacement.payload);
                replacement
            }
        };
        self.record(to, EventKind::Delivered, format!("{to} receives the {noun}"), &delivered.payload);
        Ok(delivered)
    }

    fn attack(&mut self, msg: &WireMessage, attacker: &AttackerBehavior) -> Result<Effect, ChannelError> {
        use AttackerBehavior as B;
        Ok(match attacker {
            B::PassThrough => Effect::None,
            B::Observe => Effect::Seen { notes: vec![] },
            B::ReplacePlainText { new } => {
                let replacement = match msg.kind {
                    WireKind::PlainText => WireMessage::plain(new),
                    _ => {
                        let original = msg.as_envelope()?;
                        WireMessage::envelope(&Envelope {
                            body: new.clone(),
                            digest: original.digest,
                        })
                    }
                };
                changed(msg, replacement, format!("The attacker changes the message to \"{new}\""))
            }
            B::ReplaceEnvelope { new } => changed(
                msg,
                WireMessage::envelope(&Envelope::seal(new.clone())),
                format!("The attacker changes the message to \"{new}\" and makes a new hash for it"),
            ),
            B::BitFlipCipher { bit } => {
                let mut raw = base64_decode(&msg.cipher_base64()?);
                let byte = bit / 8;
                if byte >= raw.len() {
                    return Err(ChannelError::IllegalBehavior {
                        behavior: attacker.name(),
                        kind: msg.kind,
                    });
                }
                raw[byte] ^= 1 << (bit % 8);
                use base64::Engine as _;
                let replacement = WireMessage::cipher(base64::engine::general_purpose::STANDARD.encode(raw));
                Effect::Changed {
                    replacement,
                    detail: format!("The attacker flips bit {bit} of the encrypted message"),
                }
            }
            B::StealKeyThenDecrypt => match msg.kind {
                WireKind::SymmetricKeyShare => {
                    let key = msg.as_key_share()?;
                    let detail = format!("The attacker keeps a copy of the shared key {}", key.id());
                    self.stolen_key = Some(key);
                    Effect::Seen {
                        notes: vec![(EventKind::KeyStolen, detail, msg.payload.clone())],
                    }
                }
                _ => {
                    let key = self.stolen_key.clone().ok_or(ChannelError::IllegalBehavior {
                        behavior: attacker.name(),
                        kind: msg.kind,
                    })?;
                    let cipher = msg.as_sym_cipher()?;
                    let plain = crypto::sym_decrypt(&key, &cipher).map_err(|e| {
                        ChannelError::Inconsistent(format!("stolen key cannot decrypt the ciphertext: {e}"))
                    })?;
                    let text = String::from_utf8_lossy(&plain).into_owned();
                    self.attacker_view.push(text.clone());
                    Effect::Seen {
                        notes: vec![(
                            EventKind::DecryptedByAttacker,
                            format!("The attacker uses the stolen key to read: {text}"),
                            text,
                        )],
                    }
                }
            },
        })
    }

    /// Closes the run with an explicit outcome.
    pub fn finish(self, outcome: Outcome) -> EventTrace {
        EventTrace {
            events: self.events,
            outcome,
        }
    }

    /// Closes a run that has no receiver decision.
    pub fn finish_delivered(self) -> EventTrace {
        let outcome = if self.events.iter().any(|e| e.kind == EventKind::DecryptedByAttacker) {
            Outcome::Compromised
        } else {
            Outcome::Delivered
        };
        self.finish(outcome)
    }
}

enum Effect {
    None,
    Seen { notes: Vec<(EventKind, String, String)> },
    Changed { replacement: WireMessage, detail: String },
}

fn changed(original: &WireMessage, replacement: WireMessage, detail: String) -> Effect {
    if replacement == *original {
        // Nothing to change: the attacker's text is what was sent.
        Effect::Seen { notes: vec![] }
    } else {
        Effect::Changed { replacement, detail }
    }
}

fn base64_decode(text: &str) -> Vec<u8> {
    use base64::Engine as _;
    base64::engine::general_purpose::STANDARD
        .decode(text)
        .expect("checked by cipher_base64")
}

/// One transmission on a fresh channel.
pub fn transmit(
    from: PartyId,
    to: PartyId,
    msg: &WireMessage,
    attacker: &AttackerBehavior,
) -> Result<(WireMessage, EventTrace), ChannelError> {
    let mut ch = Channel::new();
    let delivered = ch.transmit(from, to, msg, attacker)?;
    Ok((delivered, ch.finish_delivered()))
}

/// The two-step key theft: a key shared in the clear, then a ciphertext
/// under that key, both read by the attacker.
pub fn steal_key_session(
    from: PartyId,
    to: PartyId,
    key_share: &WireMessage,
    later_cipher: &WireMessage,
) -> Result<EventTrace, ChannelError> {
    if key_share.kind != WireKind::SymmetricKeyShare || later_cipher.kind != WireKind::CipherText {
        return Err(ChannelError::Inconsistent(
            "expected a key share followed by a ciphertext".into(),
        ));
    }
    let mut ch = Channel::new();
    ch.transmit(from, to, key_share, &AttackerBehavior::StealKeyThenDecrypt)?;
    ch.transmit(from, to, later_cipher, &AttackerBehavior::StealKeyThenDecrypt)?;
    Ok(ch.finish_delivered())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{generate_sym_key, make_envelope, sym_encrypt};
    use crate::entropy::Entropy;
    use proptest::prelude::*;

    fn msg(s: &str) -> Message {
        Message::new(s).unwrap()
    }

    fn sample(kind: WireKind) -> WireMessage {
        let e = Entropy::seeded(9);
        let k = generate_sym_key(&e);
        match kind {
            WireKind::PlainText => WireMessage::plain(&msg("app essay")),
            WireKind::HashOnly => WireMessage::hash_only(&crypto::hash(&msg("app essay"))),
            WireKind::EnvelopePlain => WireMessage::envelope(&make_envelope(msg("app essay"))),
            WireKind::CipherText => WireMessage::cipher(sym_encrypt(&k, b"app essay", &e).unwrap().to_base64()),
            WireKind::PublicKey => WireMessage::public_key(
                &crypto::generate_keypair(PartyId::Server, &e).unwrap().public_key,
            ),
            WireKind::SymmetricKeyShare => WireMessage::key_share(&k),
        }
    }

    fn behaviors() -> Vec<AttackerBehavior> {
        vec![
            AttackerBehavior::PassThrough,
            AttackerBehavior::ReplacePlainText { new: msg("other") },
            AttackerBehavior::ReplaceEnvelope { new: msg("other") },
            AttackerBehavior::BitFlipCipher { bit: 130 },
            AttackerBehavior::StealKeyThenDecrypt,
            AttackerBehavior::Observe,
        ]
    }

    #[test]
    fn pass_through_delivers_unchanged() {
        let m = WireMessage::plain(&msg("app essay"));
        let (out, trace) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &AttackerBehavior::PassThrough).unwrap();
        assert_eq!(out, m);
        assert_eq!(trace.kinds(), vec![EventKind::Typed, EventKind::Sent, EventKind::Delivered]);
        assert_eq!(trace.outcome, Outcome::Delivered);
        trace.validate().unwrap();
    }

    #[test]
    fn replace_plain_text_delivers_attacker_text() {
        let m = WireMessage::plain(&msg("M"));
        let b = AttackerBehavior::ReplacePlainText { new: msg("M-hat") };
        let (out, trace) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &b).unwrap();
        assert_eq!(out.as_text().unwrap().as_str(), "M-hat");
        assert!(trace.has(EventKind::Intercepted) && trace.has(EventKind::Modified));
        trace.validate().unwrap();
    }

    #[test]
    fn replace_envelope_recomputes_digest() {
        let m = WireMessage::envelope(&make_envelope(msg("M")));
        let b = AttackerBehavior::ReplaceEnvelope { new: msg("M-hat") };
        let (out, _) = transmit(PartyId::Mary, PartyId::Sita, &m, &b).unwrap();
        assert_eq!(out.as_envelope().unwrap(), make_envelope(msg("M-hat")));
    }

    #[test]
    fn replace_text_on_envelope_keeps_old_digest() {
        let m = WireMessage::envelope(&make_envelope(msg("M")));
        let b = AttackerBehavior::ReplacePlainText { new: msg("M-hat") };
        let (out, _) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &b).unwrap();
        let e = out.as_envelope().unwrap();
        assert_eq!(e.body.as_str(), "M-hat");
        assert_eq!(e.digest, crypto::hash(&msg("M")));
    }

    #[test]
    fn observe_only_adds_interception() {
        let (out, trace) = transmit(PartyId::Aria, PartyId::Server, &sample(WireKind::SymmetricKeyShare), &AttackerBehavior::Observe).unwrap();
        assert_eq!(out, sample(WireKind::SymmetricKeyShare));
        assert_eq!(
            trace.kinds(),
            vec![EventKind::Typed, EventKind::Sent, EventKind::Intercepted, EventKind::Delivered]
        );
        assert_ne!(trace.outcome, Outcome::Compromised);
    }

    #[test]
    fn attacker_cannot_be_an_endpoint() {
        let m = sample(WireKind::PlainText);
        assert_eq!(
            transmit(PartyId::Attacker, PartyId::Server, &m, &AttackerBehavior::PassThrough).unwrap_err(),
            ChannelError::AttackerEndpoint
        );
        assert_eq!(
            transmit(PartyId::Aria, PartyId::Attacker, &m, &AttackerBehavior::PassThrough).unwrap_err(),
            ChannelError::AttackerEndpoint
        );
    }

    #[test]
    fn illegal_behavior_cross_product() {
        for kind in WireKind::ALL {
            for b in behaviors() {
                let result = transmit(PartyId::Aria, PartyId::Server, &sample(kind), &b);
                let stateless_ok = b.applies_to(kind)
                    // decrypting a ciphertext needs a key stolen earlier
                    && !(b == AttackerBehavior::StealKeyThenDecrypt && kind == WireKind::CipherText);
                if stateless_ok {
                    assert!(result.is_ok(), "{b:?} on {kind:?}: {result:?}");
                } else {
                    assert!(
                        matches!(result, Err(ChannelError::IllegalBehavior { .. })),
                        "{b:?} on {kind:?} should be illegal, got {result:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn bit_flip_out_of_range_is_illegal() {
        let m = sample(WireKind::CipherText);
        let b = AttackerBehavior::BitFlipCipher { bit: 10_000 };
        assert!(matches!(transmit(PartyId::Mary, PartyId::Sita, &m, &b), Err(ChannelError::IllegalBehavior { .. })));
    }

    #[test]
    fn key_theft_session_compromises() {
        let e = Entropy::seeded(1);
        let k = generate_sym_key(&e);
        let creds = crypto::Credentials::new("aria", "sunflower7").unwrap();
        let c = WireMessage::cipher(sym_encrypt(&k, &creds.to_plaintext(), &e).unwrap().to_base64());
        let trace = steal_key_session(PartyId::Aria, PartyId::Server, &WireMessage::key_share(&k), &c).unwrap();
        assert_eq!(trace.outcome, Outcome::Compromised);
        let stolen = trace.position(EventKind::KeyStolen).unwrap();
        let read = trace.position(EventKind::DecryptedByAttacker).unwrap();
        assert!(stolen < read);
        assert!(trace.events[read].detail.contains("sunflower7"));
        trace.validate().unwrap();
    }

    #[test]
    fn key_theft_with_wrong_key_is_inconsistent() {
        let k1 = generate_sym_key(&Entropy::seeded(1));
        let k2 = generate_sym_key(&Entropy::seeded(2));
        let c = WireMessage::cipher(sym_encrypt(&k2, b"{\"x\":1}", &Entropy::seeded(2)).unwrap().to_base64());
        let err = steal_key_session(PartyId::Aria, PartyId::Server, &WireMessage::key_share(&k1), &c).unwrap_err();
        assert!(matches!(err, ChannelError::Inconsistent(_)));
    }

    #[test]
    fn previews_are_bounded() {
        assert_eq!(preview("short"), "short");
        let long = "x".repeat(60);
        let p = preview(&long);
        assert_eq!(p.chars().count(), PREVIEW_CHARS + 1);
        assert!(p.ends_with(ELLIPSIS));
        assert_eq!(preview(&"y".repeat(48)), "y".repeat(48));
    }

    #[test]
    fn validate_catches_broken_traces() {
        let m = WireMessage::plain(&msg("hi"));
        let (_, mut trace) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &AttackerBehavior::PassThrough).unwrap();
        trace.outcome = Outcome::Accepted;
        assert!(trace.validate().is_err());
        trace.outcome = Outcome::Delivered;
        trace.events[1].seq = 1;
        assert_eq!(trace.validate(), Err(TraceError::SeqOrder(1)));
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        assert!(WireMessage::new(WireKind::HashOnly, r#"{"digest":"zz"}"#).is_err());
        assert!(WireMessage::new(WireKind::CipherText, r#"{"cipher":"!!"}"#).is_err());
        assert!(WireMessage::new(WireKind::EnvelopePlain, "not json").is_err());
        assert!(WireMessage::new(WireKind::PlainText, "fine").is_ok());
    }

    proptest! {
        #[test]
        fn pass_through_is_byte_identical(text in ".{0,300}") {
            let m = WireMessage::plain(&msg(&text));
            let (out, _) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &AttackerBehavior::PassThrough).unwrap();
            prop_assert_eq!(out.payload.as_bytes(), m.payload.as_bytes());
        }

        #[test]
        fn modified_never_claims_identical_bytes(a in "[a-z ]{1,40}", b in "[a-z ]{1,40}", envelope in any::<bool>()) {
            let m = if envelope { WireMessage::envelope(&make_envelope(msg(&a))) } else { WireMessage::plain(&msg(&a)) };
            let behavior = AttackerBehavior::ReplacePlainText { new: msg(&b) };
            let (out, trace) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &behavior).unwrap();
            if trace.has(EventKind::Modified) {
                prop_assert_ne!(out.payload, m.payload);
            } else {
                prop_assert_eq!(out.payload, m.payload);
            }
        }

        #[test]
        fn traces_replay_identically(text in ".{0,80}", flip in any::<bool>()) {
            let m = WireMessage::plain(&msg(&text));
            let b = if flip { AttackerBehavior::ReplacePlainText { new: msg("zzz") } } else { AttackerBehavior::Observe };
            let (_, trace) = transmit(PartyId::Peter, PartyId::UniversityPortal, &m, &b).unwrap();
            let back = EventTrace::from_json(&trace.to_json()).unwrap();
            prop_assert_eq!(back, trace);
        }
    }
}
