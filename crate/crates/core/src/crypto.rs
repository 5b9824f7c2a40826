//! Real cryptographic primitives behind every simulation and terminal command.
//!
//! SHA-256 for digests, AES-256-CBC with PKCS#7 for symmetric encryption and
//! RSA-2048 with SHA-256 OAEP for asymmetric encryption. CBC is not an
//! authenticated mode: integrity in the lessons comes from the digest carried
//! inside the [`Envelope`], not from the cipher.
//!
//! Canonical text encodings: digests are lowercase hex, keys and ciphertexts
//! are standard base64.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Mutex, OnceLock};

use aes::Aes256;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use cbc::cipher::block_padding::Pkcs7;
use cbc::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::RngCore;
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::pkcs8::{DecodePrivateKey, EncodePrivateKey};
use rsa::traits::PublicKeyParts;
use rsa::{Oaep, RsaPrivateKey, RsaPublicKey};
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::channel::PartyId;
use crate::entropy::Entropy;

/// Upper bound on message length in bytes.
pub const MAX_MESSAGE_BYTES: usize = 64 * 1024;
pub const RSA_BITS: usize = 2048;
/// Largest plaintext a single RSA-2048 OAEP(SHA-256) block can carry.
pub const OAEP_MAX_PLAINTEXT: usize = RSA_BITS / 8 - 2 * 32 - 2;
const BLOCK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("message exceeds {MAX_MESSAGE_BYTES} bytes")]
    MessageTooLong,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("plaintext of {len} bytes exceeds the {max}-byte OAEP limit")]
    PlaintextTooLong { len: usize, max: usize },
    #[error("decryption failed: bad padding")]
    BadPadding,
    #[error("decryption failed")]
    Decrypt,
    #[error("malformed {what}: {reason}")]
    Malformed { what: &'static str, reason: String },
    #[error("key generation failed: {0}")]
    KeyGeneration(String),
    #[error("credentials need a non-empty username and password")]
    EmptyCredentials,
}

fn malformed(what: &'static str, reason: impl fmt::Display) -> CryptoError {
    CryptoError::Malformed {
        what,
        reason: reason.to_string(),
    }
}

/// Student-visible message text.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Message(String);

impl Message {
    pub fn new(text: impl Into<String>) -> Result<Self, CryptoError> {
        let text = text.into();
        if text.len() > MAX_MESSAGE_BYTES {
            return Err(CryptoError::MessageTooLong);
        }
        Ok(Message(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn as_bytes(&self) -> &[u8] {
        self.0.as_bytes()
    }
}

impl TryFrom<String> for Message {
    type Error = CryptoError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Message::new(value)
    }
}

impl From<Message> for String {
    fn from(m: Message) -> String {
        m.0
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Digest([u8; 32]);

impl Digest {
    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Accepts only the canonical form: 64 lowercase hex characters.
    pub fn from_hex(text: &str) -> Result<Self, CryptoError> {
        if text.len() != 64 || text.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(malformed("digest", "expected 64 lowercase hex characters"));
        }
        let bytes = hex::decode(text).map_err(|e| malformed("digest", e))?;
        Ok(Digest(bytes.try_into().expect("length checked")))
    }
}

impl TryFrom<String> for Digest {
    type Error = CryptoError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Digest::from_hex(&value)
    }
}

impl From<Digest> for String {
    fn from(d: Digest) -> String {
        d.to_hex()
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn hash(m: &Message) -> Digest {
    Digest::of(m.as_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Accept,
    RejectTampered,
}

/// A message paired with its digest.
///
/// Wire form is `{"body":<string>,"digest":<64-hex>}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub body: Message,
    pub digest: Digest,
}

impl Envelope {
    pub fn seal(body: Message) -> Self {
        let digest = hash(&body);
        Envelope { body, digest }
    }

    pub fn verify(&self) -> Verification {
        if hash(&self.body) == self.digest {
            Verification::Accept
        } else {
            Verification::RejectTampered
        }
    }

    pub fn to_wire(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn from_wire(text: &str) -> Result<Self, CryptoError> {
        serde_json::from_str(text).map_err(|e| malformed("envelope", e))
    }
}

pub fn make_envelope(m: Message) -> Envelope {
    Envelope::seal(m)
}

pub fn verify_envelope(e: &Envelope) -> Verification {
    e.verify()
}

/// Hash-only record, `{"digest":<64-hex>}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HashRecord {
    pub digest: Digest,
}

/// Ciphertext record, `{"cipher":<base64>}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CipherRecord {
    pub cipher: String,
}

/// A 256-bit AES key.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SymmetricKey {
    bytes: [u8; 32],
}

impl SymmetricKey {
    pub fn generate(entropy: &Entropy) -> Self {
        let mut bytes = [0u8; 32];
        entropy.key_rng("symmetric-key").fill_bytes(&mut bytes);
        SymmetricKey { bytes }
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SymmetricKey { bytes }
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    /// Short fingerprint for display; not secret-bearing.
    pub fn id(&self) -> String {
        format!("key-{}", &hex::encode(Sha256::digest(self.bytes))[..8])
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.bytes)
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        let raw = B64.decode(text).map_err(|e| malformed("key", e))?;
        let bytes: [u8; 32] = raw
            .try_into()
            .map_err(|_| malformed("key", "expected 32 bytes"))?;
        Ok(SymmetricKey { bytes })
    }
}

impl TryFrom<String> for SymmetricKey {
    type Error = CryptoError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        SymmetricKey::from_base64(&value)
    }
}

impl From<SymmetricKey> for String {
    fn from(k: SymmetricKey) -> String {
        k.to_base64()
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymmetricKey({})", self.id())
    }
}

pub fn generate_sym_key(entropy: &Entropy) -> SymmetricKey {
    SymmetricKey::generate(entropy)
}

/// AES-CBC output: IV plus padded payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    pub iv: [u8; BLOCK],
    pub payload: Vec<u8>,
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOCK + self.payload.len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self, CryptoError> {
        if raw.len() < 2 * BLOCK || !raw.len().is_multiple_of(BLOCK) {
            return Err(malformed(
                "ciphertext",
                "expected a 16-byte IV and a payload of whole 16-byte blocks",
            ));
        }
        let (iv, payload) = raw.split_at(BLOCK);
        Ok(Ciphertext {
            iv: iv.try_into().expect("split at block size"),
            payload: payload.to_vec(),
        })
    }

    pub fn to_base64(&self) -> String {
        B64.encode(self.to_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        let raw = B64.decode(text).map_err(|e| malformed("ciphertext", e))?;
        Self::from_bytes(&raw)
    }
}

pub fn sym_encrypt(
    key: &SymmetricKey,
    plaintext: &[u8],
    entropy: &Entropy,
) -> Result<Ciphertext, CryptoError> {
    let mut iv = [0u8; BLOCK];
    entropy.nonce_rng("symmetric-iv").fill_bytes(&mut iv);
    sym_encrypt_with_iv(key, plaintext, iv)
}

pub fn sym_encrypt_with_iv(
    key: &SymmetricKey,
    plaintext: &[u8],
    iv: [u8; BLOCK],
) -> Result<Ciphertext, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let payload = cbc::Encryptor::<Aes256>::new(key.as_bytes().into(), &iv.into())
        .encrypt_padded_vec_mut::<Pkcs7>(plaintext);
    Ok(Ciphertext { iv, payload })
}

pub fn sym_decrypt(key: &SymmetricKey, c: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    if c.payload.is_empty() || !c.payload.len().is_multiple_of(BLOCK) {
        return Err(malformed("ciphertext", "payload is not whole blocks"));
    }
    cbc::Decryptor::<Aes256>::new(key.as_bytes().into(), &c.iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&c.payload)
        .map_err(|_| CryptoError::BadPadding)
}

/// RSA public key; wire form is base64 PKCS#1 DER.
#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey(RsaPublicKey);

impl PublicKey {
    pub fn to_base64(&self) -> String {
        let der = self.0.to_pkcs1_der().expect("public key encodes");
        B64.encode(der.as_bytes())
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        let der = B64.decode(text).map_err(|e| malformed("public key", e))?;
        RsaPublicKey::from_pkcs1_der(&der)
            .map(PublicKey)
            .map_err(|e| malformed("public key", e))
    }

    pub fn modulus_bits(&self) -> usize {
        self.0.n().bits()
    }

    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.to_base64().as_bytes())[..6])
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.fingerprint())
    }
}

impl Serialize for PublicKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_base64())
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        PublicKey::from_base64(&text).map_err(serde::de::Error::custom)
    }
}

/// RSA private key. Serializes as base64 PKCS#8 for server-side storage only;
/// no wire message kind carries it.
#[derive(Clone, PartialEq, Eq)]
pub struct PrivateKey(RsaPrivateKey);

impl PrivateKey {
    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.0.to_public_key())
    }
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PrivateKey(for {})", self.public_key().fingerprint())
    }
}

impl Serialize for PrivateKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let der = self
            .0
            .to_pkcs8_der()
            .map_err(serde::ser::Error::custom)?;
        s.serialize_str(&B64.encode(der.as_bytes()))
    }
}

impl<'de> Deserialize<'de> for PrivateKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let der = B64.decode(text).map_err(serde::de::Error::custom)?;
        RsaPrivateKey::from_pkcs8_der(&der)
            .map(PrivateKey)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyPair {
    pub owner: PartyId,
    pub public_key: PublicKey,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    private_key: Option<PrivateKey>,
}

impl KeyPair {
    pub fn private_key(&self) -> &PrivateKey {
        self.private_key
            .as_ref()
            .expect("key pairs are constructed with a private key")
    }

    pub fn from_private(owner: PartyId, private: PrivateKey) -> Self {
        KeyPair {
            owner,
            public_key: private.public_key(),
            private_key: Some(private),
        }
    }
}

fn keypair_cache() -> &'static Mutex<HashMap<[u8; 32], RsaPrivateKey>> {
    static CACHE: OnceLock<Mutex<HashMap<[u8; 32], RsaPrivateKey>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Generates an RSA-2048 key pair for `owner`.
///
/// The key stream label includes the owner, so two parties drawing from one
/// entropy get different pairs. Seeded generation is memoized by its derived
/// seed: the result is identical either way, it just skips the prime search.
pub fn generate_keypair(owner: PartyId, entropy: &Entropy) -> Result<KeyPair, CryptoError> {
    let label = format!("rsa-keypair/{}", owner.as_str());
    let (mut rng, seed) = entropy.key_rng_with_seed(&label);
    if let Some(seed) = seed {
        if let Some(hit) = keypair_cache().lock().unwrap().get(&seed) {
            return Ok(KeyPair::from_private(owner, PrivateKey(hit.clone())));
        }
    }
    let private = RsaPrivateKey::new(&mut rng, RSA_BITS)
        .map_err(|e| CryptoError::KeyGeneration(e.to_string()))?;
    if let Some(seed) = seed {
        keypair_cache()
            .lock()
            .unwrap()
            .insert(seed, private.clone());
    }
    Ok(KeyPair::from_private(owner, PrivateKey(private)))
}

/// RSA-OAEP output, one modulus-sized block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SealedCiphertext(pub Vec<u8>);

impl SealedCiphertext {
    pub fn to_base64(&self) -> String {
        B64.encode(&self.0)
    }

    pub fn from_base64(text: &str) -> Result<Self, CryptoError> {
        B64.decode(text)
            .map(SealedCiphertext)
            .map_err(|e| malformed("ciphertext", e))
    }
}

pub fn asym_encrypt(
    public: &PublicKey,
    plaintext: &[u8],
    entropy: &Entropy,
) -> Result<SealedCiphertext, CryptoError> {
    if plaintext.len() > OAEP_MAX_PLAINTEXT {
        return Err(CryptoError::PlaintextTooLong {
            len: plaintext.len(),
            max: OAEP_MAX_PLAINTEXT,
        });
    }
    let mut rng = entropy.nonce_rng("oaep");
    public
        .0
        .encrypt(&mut rng, Oaep::new::<Sha256>(), plaintext)
        .map(SealedCiphertext)
        .map_err(|_| CryptoError::Decrypt)
}

pub fn asym_decrypt(private: &PrivateKey, c: &SealedCiphertext) -> Result<Vec<u8>, CryptoError> {
    private
        .0
        .decrypt(Oaep::new::<Sha256>(), &c.0)
        .map_err(|_| CryptoError::Decrypt)
}

/// A login pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCredentials")]
pub struct Credentials {
    pub username: String,
    pub password: String,
}

#[derive(Deserialize)]
struct RawCredentials {
    username: String,
    password: String,
}

impl TryFrom<RawCredentials> for Credentials {
    type Error = CryptoError;
    fn try_from(raw: RawCredentials) -> Result<Self, Self::Error> {
        Credentials::new(raw.username, raw.password)
    }
}

impl Credentials {
    pub fn new(username: impl Into<String>, password: impl Into<String>) -> Result<Self, CryptoError> {
        let (username, password) = (username.into(), password.into());
        if username.is_empty() || password.is_empty() {
            return Err(CryptoError::EmptyCredentials);
        }
        Ok(Credentials { username, password })
    }

    /// The bytes that get encrypted: `{"username":..,"password":..}`.
    pub fn to_plaintext(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("credentials serialize")
    }

    pub fn from_plaintext(bytes: &[u8]) -> Result<Self, CryptoError> {
        serde_json::from_slice(bytes).map_err(|e| malformed("credentials", e))
    }
}
