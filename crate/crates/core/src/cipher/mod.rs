//! Pluggable symmetric encryption for stored secrets.
//!
//! Every secret cell is a [`CipherEnvelope`]: a 12-byte nonce plus a body.
//! Encryption is randomized by the caller-supplied nonce, so equal plaintexts
//! produce unequal envelopes. Two backends implement [`Cipher`]:
//!
//! - [`AeadCipher`]: ChaCha20-Poly1305, authenticated.
//! - [`XorStreamCipher`]: a keyed hash stream, deterministic and **not secure**,
//!   used for reproducible fixtures.
//!
//! Decryption always goes through [`CountingCipher::decrypt`], which bumps a
//! per-execution [`DecryptionCounter`] and can inject an artificial delay.

mod aead;
mod xor;

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hkdf::Hkdf;
use sha2::Sha256;
use thiserror::Error;

pub use aead::AeadCipher;
pub use xor::XorStreamCipher;

/// Width of every envelope nonce, in bytes.
pub const NONCE_LEN: usize = 12;

/// Shortest key material any backend accepts.
pub const MIN_KEY_LEN: usize = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CipherError {
    #[error("invalid key: expected {expected} bytes of key material, got {actual}")]
    InvalidKey { expected: usize, actual: usize },
    #[error("invalid nonce: expected {NONCE_LEN} bytes, got {0}")]
    InvalidNonce(usize),
    #[error("ciphertext failed authentication")]
    AuthFailure,
    #[error("malformed envelope: {0}")]
    MalformedEnvelope(String),
}

/// Symmetric key material.
#[derive(Clone, PartialEq, Eq)]
pub struct CipherKey {
    material: Vec<u8>,
}

impl CipherKey {
    pub fn new(material: impl Into<Vec<u8>>) -> Result<Self, CipherError> {
        let material = material.into();
        if material.len() < MIN_KEY_LEN {
            return Err(CipherError::InvalidKey {
                expected: MIN_KEY_LEN,
                actual: material.len(),
            });
        }
        Ok(Self { material })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.material
    }
}

impl fmt::Debug for CipherKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CipherKey({} bytes)", self.material.len())
    }
}

/// The two keys a protected pair needs: one for main-table cells and one for
/// the encrypted record keys of the search tables.
#[derive(Debug, Clone)]
pub struct KeyPair {
    pub main: CipherKey,
    pub search: CipherKey,
}

/// How the pair of keys is obtained from a master secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KeyMode {
    /// Two independent keys via HKDF-SHA256 with distinct labels.
    #[default]
    Derived,
    /// Both tables use the master secret directly.
    Shared,
}

impl KeyMode {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyMode::Derived => "derived",
            KeyMode::Shared => "shared",
        }
    }
}

impl FromStr for KeyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "derived" => Ok(KeyMode::Derived),
            "shared" => Ok(KeyMode::Shared),
            other => Err(format!("unknown key mode `{other}`")),
        }
    }
}

impl KeyPair {
    pub fn from_master(master: &[u8], mode: KeyMode, key_len: usize) -> Result<Self, CipherError> {
        if master.len() < MIN_KEY_LEN {
            return Err(CipherError::InvalidKey {
                expected: MIN_KEY_LEN,
                actual: master.len(),
            });
        }
        match mode {
            KeyMode::Shared => {
                let key = CipherKey::new(master.to_vec())?;
                Ok(Self {
                    main: key.clone(),
                    search: key,
                })
            }
            KeyMode::Derived => {
                let hk = Hkdf::<Sha256>::new(None, master);
                let expand = |label: &[u8]| {
                    let mut out = vec![0u8; key_len];
                    hk.expand(label, &mut out).map_err(|_| CipherError::InvalidKey {
                        expected: 32,
                        actual: key_len,
                    })?;
                    CipherKey::new(out)
                };
                Ok(Self {
                    main: expand(b"sealtable/main-table")?,
                    search: expand(b"sealtable/search-table")?,
                })
            }
        }
    }
}

/// A randomized ciphertext: nonce plus body.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CipherEnvelope {
    nonce: [u8; NONCE_LEN],
    body: Vec<u8>,
}

impl CipherEnvelope {
    pub fn new(nonce: [u8; NONCE_LEN], body: Vec<u8>) -> Self {
        Self { nonce, body }
    }

    pub fn nonce(&self) -> &[u8; NONCE_LEN] {
        &self.nonce
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }

    /// Hex of nonce followed by hex of body: 24 nonce chars, then the body.
    pub fn to_hex(&self) -> String {
        let mut out = hex::encode(self.nonce);
        out.push_str(&hex::encode(&self.body));
        out
    }

    pub fn from_hex(text: &str) -> Result<Self, CipherError> {
        if text.len() < NONCE_LEN * 2 {
            return Err(CipherError::MalformedEnvelope(format!(
                "envelope needs at least {} hex chars, got {}",
                NONCE_LEN * 2,
                text.len()
            )));
        }
        let bytes = hex::decode(text).map_err(|e| CipherError::MalformedEnvelope(e.to_string()))?;
        let mut nonce = [0u8; NONCE_LEN];
        nonce.copy_from_slice(&bytes[..NONCE_LEN]);
        Ok(Self {
            nonce,
            body: bytes[NONCE_LEN..].to_vec(),
        })
    }
}

/// A symmetric cipher backend. Implementations are pure in (key, nonce).
pub trait Cipher: Send + Sync + fmt::Debug {
    /// Stable identifier persisted in metadata files.
    fn id(&self) -> &'static str;

    /// Exact key length this backend requires.
    fn key_len(&self) -> usize;

    fn seal(&self, plaintext: &[u8], key: &CipherKey, nonce: &[u8; NONCE_LEN]) -> Result<Vec<u8>, CipherError>;

    fn open(&self, envelope: &CipherEnvelope, key: &CipherKey) -> Result<Vec<u8>, CipherError>;

    fn check_key(&self, key: &CipherKey) -> Result<(), CipherError> {
        if key.as_bytes().len() != self.key_len() {
            return Err(CipherError::InvalidKey {
                expected: self.key_len(),
                actual: key.as_bytes().len(),
            });
        }
        Ok(())
    }
}

/// Which backend to instantiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CipherKind {
    #[default]
    Aead,
    XorTest,
}

impl CipherKind {
    pub fn build(self) -> Arc<dyn Cipher> {
        match self {
            CipherKind::Aead => Arc::new(AeadCipher),
            CipherKind::XorTest => Arc::new(XorStreamCipher),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            CipherKind::Aead => AeadCipher::ID,
            CipherKind::XorTest => XorStreamCipher::ID,
        }
    }
}

impl FromStr for CipherKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            AeadCipher::ID | "aead" => Ok(CipherKind::Aead),
            XorStreamCipher::ID | "test" => Ok(CipherKind::XorTest),
            other => Err(format!("unknown cipher `{other}`")),
        }
    }
}

/// Counts decrypt calls for one execution. Deliberately `!Sync`: a counter
/// belongs to exactly one execution context.
#[derive(Debug, Default)]
pub struct DecryptionCounter {
    scope: String,
    count: Cell<u64>,
}

impl DecryptionCounter {
    pub fn new(scope: impl Into<String>) -> Self {
        Self {
            scope: scope.into(),
            count: Cell::new(0),
        }
    }

    pub fn scope(&self) -> &str {
        &self.scope
    }

    pub fn count(&self) -> u64 {
        self.count.get()
    }

    fn bump(&self) {
        self.count.set(self.count.get() + 1);
    }
}

/// A cipher backend wrapped with decrypt-call instrumentation and an optional
/// artificial per-decryption cost.
#[derive(Debug, Clone)]
pub struct CountingCipher {
    inner: Arc<dyn Cipher>,
    delay: Duration,
}

impl CountingCipher {
    pub fn new(inner: Arc<dyn Cipher>) -> Self {
        Self {
            inner,
            delay: Duration::ZERO,
        }
    }

    pub fn of_kind(kind: CipherKind) -> Self {
        Self::new(kind.build())
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn delay(&self) -> Duration {
        self.delay
    }

    pub fn backend(&self) -> &dyn Cipher {
        self.inner.as_ref()
    }

    pub fn encrypt(&self, plaintext: &[u8], key: &CipherKey, nonce: &[u8]) -> Result<CipherEnvelope, CipherError> {
        let nonce: [u8; NONCE_LEN] = nonce.try_into().map_err(|_| CipherError::InvalidNonce(nonce.len()))?;
        self.inner.check_key(key)?;
        let body = self.inner.seal(plaintext, key, &nonce)?;
        Ok(CipherEnvelope { nonce, body })
    }

    /// Decrypts and counts the call, whether or not it succeeds.
    pub fn decrypt(
        &self,
        envelope: &CipherEnvelope,
        key: &CipherKey,
        counter: &DecryptionCounter,
    ) -> Result<Vec<u8>, CipherError> {
        counter.bump();
        if !self.delay.is_zero() {
            spin_for(self.delay);
        }
        self.inner.check_key(key)?;
        self.inner.open(envelope, key)
    }
}

// thread::sleep cannot resolve microsecond delays.
fn spin_for(delay: Duration) {
    let start = Instant::now();
    while start.elapsed() < delay {
        std::hint::spin_loop();
    }
}
