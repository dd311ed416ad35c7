use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};

use super::{Cipher, CipherEnvelope, CipherError, CipherKey, NONCE_LEN};

/// ChaCha20-Poly1305. Body is ciphertext followed by the 16-byte tag.
#[derive(Debug, Clone, Copy, Default)]
pub struct AeadCipher;

impl AeadCipher {
    pub const ID: &'static str = "chacha20poly1305";
}

impl Cipher for AeadCipher {
    fn id(&self) -> &'static str {
        Self::ID
    }

    fn key_len(&self) -> usize {
        32
    }

    fn seal(&self, plaintext: &[u8], key: &CipherKey, nonce: &[u8; NONCE_LEN]) -> Result<Vec<u8>, CipherError> {
        let aead = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
        aead.encrypt(Nonce::from_slice(nonce), plaintext)
            .map_err(|_| CipherError::MalformedEnvelope("encryption failed".into()))
    }

    fn open(&self, envelope: &CipherEnvelope, key: &CipherKey) -> Result<Vec<u8>, CipherError> {
        let aead = ChaCha20Poly1305::new(Key::from_slice(key.as_bytes()));
        aead.decrypt(Nonce::from_slice(envelope.nonce()), envelope.body())
            .map_err(|_| CipherError::AuthFailure)
    }
}
