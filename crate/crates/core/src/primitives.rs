//! Commitments, signatures and authenticated symmetric encryption.
//!
//! Commitments are HMAC-SHA256 tags keyed by a fresh 32-byte opening. Signatures are
//! Ed25519. Symmetric encryption is AES-256-GCM with a 16-byte random nonce, laid out as
//! `nonce ‖ body ‖ tag`.

use aes_gcm::aead::consts::U16;
use aes_gcm::aead::{Aead, KeyInit};
use aes_gcm::aes::Aes256;
use aes_gcm::{AesGcm, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;
use subtle::ConstantTimeEq;

use crate::error::CryptoError;

type HmacSha256 = Hmac<Sha256>;
type Aes256Gcm16 = AesGcm<Aes256, U16>;

pub const COMMITMENT_LEN: usize = 32;
pub const OPENING_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const VERIFYING_KEY_LEN: usize = 32;
pub const SYM_NONCE_LEN: usize = 16;
pub const SYM_TAG_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Commitment(pub [u8; COMMITMENT_LEN]);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Opening(pub [u8; OPENING_LEN]);

impl AsRef<[u8]> for Commitment {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

fn mac(key: &[u8; OPENING_LEN], message: &[u8]) -> [u8; COMMITMENT_LEN] {
    let mut mac = <HmacSha256 as Mac>::new_from_slice(key).expect("HMAC accepts any key length");
    mac.update(message);
    mac.finalize().into_bytes().into()
}

pub fn commit<R: RngCore + CryptoRng>(message: &[u8], rng: &mut R) -> (Commitment, Opening) {
    let mut key = [0u8; OPENING_LEN];
    rng.fill_bytes(&mut key);
    (Commitment(mac(&key, message)), Opening(key))
}

pub fn open(com: &Commitment, op: &Opening, message: &[u8]) -> bool {
    mac(&op.0, message).ct_eq(&com.0).into()
}

/// Ed25519 signing key with its 32-byte verification key.
#[derive(Clone, Debug)]
pub struct SigKeypair {
    signing: SigningKey,
}

impl SigKeypair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        SigKeypair {
            signing: SigningKey::generate(rng),
        }
    }

    pub fn from_secret_bytes(bytes: &[u8; 32]) -> Self {
        SigKeypair {
            signing: SigningKey::from_bytes(bytes),
        }
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn verifying_key(&self) -> [u8; VERIFYING_KEY_LEN] {
        self.signing.verifying_key().to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> [u8; SIGNATURE_LEN] {
        self.signing.sign(message).to_bytes()
    }
}

/// Malformed keys and signatures are rejected rather than reported as errors.
pub fn verify(
    vk: &[u8; VERIFYING_KEY_LEN],
    signature: &[u8; SIGNATURE_LEN],
    message: &[u8],
) -> bool {
    let Ok(key) = VerifyingKey::from_bytes(vk) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(signature);
    key.verify(message, &sig).is_ok()
}

pub fn check_verifying_key(vk: &[u8; VERIFYING_KEY_LEN]) -> Result<(), CryptoError> {
    VerifyingKey::from_bytes(vk)
        .map(|_| ())
        .map_err(|_| CryptoError::InvalidKey)
}

#[derive(Clone)]
pub struct SymKey([u8; 32]);

impl std::fmt::Debug for SymKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SymKey(..)")
    }
}

impl SymKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut key = [0u8; 32];
        rng.fill_bytes(&mut key);
        SymKey(key)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        SymKey(bytes)
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0
    }

    /// Ciphertext length for a given plaintext length.
    pub const fn ciphertext_len(plaintext_len: usize) -> usize {
        SYM_NONCE_LEN + plaintext_len + SYM_TAG_LEN
    }

    pub fn encrypt<R: RngCore + CryptoRng>(&self, plaintext: &[u8], rng: &mut R) -> Vec<u8> {
        let cipher = Aes256Gcm16::new((&self.0).into());
        let mut nonce = [0u8; SYM_NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let body = cipher
            .encrypt(Nonce::<U16>::from_slice(&nonce), plaintext)
            .expect("AES-GCM encryption is infallible for short inputs");
        let mut out = Vec::with_capacity(SYM_NONCE_LEN + body.len());
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&body);
        out
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        if ciphertext.len() < SYM_NONCE_LEN + SYM_TAG_LEN {
            return Err(CryptoError::Decryption);
        }
        let (nonce, body) = ciphertext.split_at(SYM_NONCE_LEN);
        let cipher = Aes256Gcm16::new((&self.0).into());
        cipher
            .decrypt(Nonce::<U16>::from_slice(nonce), body)
            .map_err(|_| CryptoError::Decryption)
    }
}
