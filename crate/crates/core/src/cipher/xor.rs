use sha2::{Digest, Sha256};

use super::{Cipher, CipherEnvelope, CipherError, CipherKey, NONCE_LEN};

/// Keyed XOR stream for reproducible tests. NOT SECURE.
///
/// Keystream block `i` is `SHA-256(key || nonce || i as u64 big-endian)`;
/// the body is the plaintext XOR the concatenated blocks, so it has the same
/// length as the plaintext. There is no authentication.
#[derive(Debug, Clone, Copy, Default)]
pub struct XorStreamCipher;

impl XorStreamCipher {
    pub const ID: &'static str = "xor-sha256-test";

    fn apply(data: &[u8], key: &CipherKey, nonce: &[u8; NONCE_LEN]) -> Vec<u8> {
        let mut out = Vec::with_capacity(data.len());
        for (block_index, chunk) in data.chunks(32).enumerate() {
            let mut h = Sha256::new();
            h.update(key.as_bytes());
            h.update(nonce);
            h.update((block_index as u64).to_be_bytes());
            let pad = h.finalize();
            out.extend(chunk.iter().zip(pad.iter()).map(|(a, b)| a ^ b));
        }
        out
    }
}

impl Cipher for XorStreamCipher {
    fn id(&self) -> &'static str {
        Self::ID
    }

    fn key_len(&self) -> usize {
        32
    }

    fn seal(&self, plaintext: &[u8], key: &CipherKey, nonce: &[u8; NONCE_LEN]) -> Result<Vec<u8>, CipherError> {
        Ok(Self::apply(plaintext, key, nonce))
    }

    fn open(&self, envelope: &CipherEnvelope, key: &CipherKey) -> Result<Vec<u8>, CipherError> {
        Ok(Self::apply(envelope.body(), key, envelope.nonce()))
    }
}
