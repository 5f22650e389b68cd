//! Prime-order group arithmetic over Ristretto255, hash-to-group, Chaum–Pedersen
//! DLEQ proofs and the Privacy Pass blind-token algorithms built on them.

use curve25519_dalek::constants::RISTRETTO_BASEPOINT_POINT;
use curve25519_dalek::ristretto::CompressedRistretto;
use curve25519_dalek::traits::VartimeMultiscalarMul;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256, Sha512};

pub use curve25519_dalek::ristretto::RistrettoPoint as GroupElement;
pub use curve25519_dalek::scalar::Scalar;

use crate::error::CryptoError;

/// Little-endian encoding of the group order
/// q = 2^252 + 27742317777372353535851937790883648493.
pub const GROUP_ORDER_LE: [u8; 32] = [
    0xed, 0xd3, 0xf5, 0x5c, 0x1a, 0x63, 0x12, 0x58, 0xd6, 0x9c, 0xf7, 0xa2, 0xde, 0xf9, 0xde, 0x14,
    0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x10,
];

/// Identifier of the Ristretto255 / SHA-512 suite.
pub const SUITE_RISTRETTO255: u8 = 1;

const HASH_TO_GROUP_DST: &[u8] = b"sandi/h2g/v1";
const DLEQ_DST: &[u8] = b"sandi/dleq/v1";
const DLEQ_BATCH_DST: &[u8] = b"sandi/dleq-batch/v1";

/// Public group parameters `pp = (q, G)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupParams {
    pub suite_id: u8,
    pub generator: GroupElement,
}

impl Default for GroupParams {
    fn default() -> Self {
        GroupParams {
            suite_id: SUITE_RISTRETTO255,
            generator: RISTRETTO_BASEPOINT_POINT,
        }
    }
}

impl GroupParams {
    /// Encoded length of `suite_id ‖ G`.
    pub const ENCODED_LEN: usize = 33;

    pub fn to_bytes(&self) -> [u8; 33] {
        let mut out = [0u8; 33];
        out[0] = self.suite_id;
        out[1..].copy_from_slice(self.generator.compress().as_bytes());
        out
    }

    /// Decodes `suite_id ‖ G`. Only the Ristretto255 suite with the canonical base point is
    /// accepted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(CryptoError::Length {
                expected: Self::ENCODED_LEN,
                actual: bytes.len(),
            });
        }
        if bytes[0] != SUITE_RISTRETTO255 {
            return Err(CryptoError::UnknownSuite(bytes[0]));
        }
        let generator = decode_element(&bytes[1..])?;
        let params = GroupParams {
            suite_id: bytes[0],
            generator,
        };
        if params != GroupParams::default() {
            return Err(CryptoError::UnexpectedGenerator);
        }
        Ok(params)
    }
}

pub fn encode_element(element: &GroupElement) -> [u8; 32] {
    element.compress().to_bytes()
}

/// Decodes a canonical 32-byte element encoding; non-canonical encodings are rejected.
pub fn decode_element(bytes: &[u8]) -> Result<GroupElement, CryptoError> {
    let compressed = CompressedRistretto::from_slice(bytes).map_err(|_| CryptoError::Length {
        expected: 32,
        actual: bytes.len(),
    })?;
    compressed.decompress().ok_or(CryptoError::InvalidElement)
}

/// Decodes a canonical little-endian scalar (`0 ≤ value < q`).
pub fn decode_scalar(bytes: &[u8]) -> Result<Scalar, CryptoError> {
    let arr: [u8; 32] = bytes.try_into().map_err(|_| CryptoError::Length {
        expected: 32,
        actual: bytes.len(),
    })?;
    Option::from(Scalar::from_canonical_bytes(arr)).ok_or(CryptoError::InvalidScalar)
}

/// Samples a uniform scalar from `Z_q^*`.
pub fn random_nonzero_scalar<R: RngCore + CryptoRng>(rng: &mut R) -> Scalar {
    loop {
        let s = Scalar::random(rng);
        if s != Scalar::ZERO {
            return s;
        }
    }
}

/// Deterministically maps an arbitrary byte string to a group element using a
/// domain-separated 64-byte SHA-512 expansion and the Ristretto uniform map.
pub fn hash_to_group(input: &[u8]) -> GroupElement {
    let wide = Sha512::new()
        .chain_update(HASH_TO_GROUP_DST)
        .chain_update(input)
        .finalize();
    let mut bytes = [0u8; 64];
    bytes.copy_from_slice(&wide);
    GroupElement::from_uniform_bytes(&bytes)
}

/// Non-interactive Chaum–Pedersen proof that `log_{P1} Q1 = log_{P2} Q2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DleqProof {
    pub c: Scalar,
    pub s: Scalar,
}

impl DleqProof {
    pub const ENCODED_LEN: usize = 64;

    pub fn to_bytes(&self) -> [u8; 64] {
        let mut out = [0u8; 64];
        out[..32].copy_from_slice(self.c.as_bytes());
        out[32..].copy_from_slice(self.s.as_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(CryptoError::Length {
                expected: Self::ENCODED_LEN,
                actual: bytes.len(),
            });
        }
        Ok(DleqProof {
            c: decode_scalar(&bytes[..32])?,
            s: decode_scalar(&bytes[32..])?,
        })
    }
}

/// `c = H(q ‖ P1 ‖ Q1 ‖ P2 ‖ Q2 ‖ A ‖ B)` reduced into the scalar field.
pub(crate) fn dleq_challenge(
    p1: &GroupElement,
    q1: &GroupElement,
    p2: &GroupElement,
    q2: &GroupElement,
    a: &GroupElement,
    b: &GroupElement,
) -> Scalar {
    let mut hasher = Sha256::new();
    hasher.update(DLEQ_DST);
    hasher.update(GROUP_ORDER_LE);
    for point in [p1, q1, p2, q2, a, b] {
        hasher.update(point.compress().as_bytes());
    }
    Scalar::from_bytes_mod_order(hasher.finalize().into())
}

/// Proves `Q1 = sk·P1` and `Q2 = sk·P2`. Garbage in, garbage out: the caller is
/// responsible for the statement being true.
pub fn nizk_dleq_prove<R: RngCore + CryptoRng>(
    p1: &GroupElement,
    q1: &GroupElement,
    p2: &GroupElement,
    q2: &GroupElement,
    sk: &Scalar,
    rng: &mut R,
) -> DleqProof {
    let k = random_nonzero_scalar(rng);
    let a = k * p1;
    let b = k * p2;
    let c = dleq_challenge(p1, q1, p2, q2, &a, &b);
    let s = k - c * sk;
    DleqProof { c, s }
}

/// Accepts iff `c = H(q ‖ P1 ‖ Q1 ‖ P2 ‖ Q2 ‖ s·P1 + c·Q1 ‖ s·P2 + c·Q2)`.
pub fn nizk_dleq_verify(
    p1: &GroupElement,
    q1: &GroupElement,
    p2: &GroupElement,
    q2: &GroupElement,
    proof: &DleqProof,
) -> bool {
    let a = GroupElement::vartime_multiscalar_mul([proof.s, proof.c], [*p1, *q1]);
    let b = GroupElement::vartime_multiscalar_mul([proof.s, proof.c], [*p2, *q2]);
    dleq_challenge(p1, q1, p2, q2, &a, &b) == proof.c
}

/// Folds `(P2_i, Q2_i)` into one pair with transcript-derived coefficients.
fn batch_combine(
    p1: &GroupElement,
    q1: &GroupElement,
    p2s: &[GroupElement],
    q2s: &[GroupElement],
) -> (GroupElement, GroupElement) {
    let mut seed = Sha256::new();
    seed.update(DLEQ_BATCH_DST);
    seed.update(p1.compress().as_bytes());
    seed.update(q1.compress().as_bytes());
    for (p, q) in p2s.iter().zip(q2s) {
        seed.update(p.compress().as_bytes());
        seed.update(q.compress().as_bytes());
    }
    let seed = seed.finalize();
    let coefficients: Vec<Scalar> = (0..p2s.len() as u32)
        .map(|i| {
            let digest = Sha256::new()
                .chain_update(seed)
                .chain_update(i.to_be_bytes())
                .finalize();
            Scalar::from_bytes_mod_order(digest.into())
        })
        .collect();
    let p = GroupElement::vartime_multiscalar_mul(&coefficients, p2s);
    let q = GroupElement::vartime_multiscalar_mul(&coefficients, q2s);
    (p, q)
}

/// Batched DLEQ: one proof that `Q1 = sk·P1` and `Q2_i = sk·P2_i` for every `i`.
pub fn nizk_dleq_prove_batch<R: RngCore + CryptoRng>(
    p1: &GroupElement,
    q1: &GroupElement,
    p2s: &[GroupElement],
    q2s: &[GroupElement],
    sk: &Scalar,
    rng: &mut R,
) -> Result<DleqProof, CryptoError> {
    if p2s.len() != q2s.len() || p2s.is_empty() {
        return Err(CryptoError::BatchShape);
    }
    let (p2, q2) = batch_combine(p1, q1, p2s, q2s);
    Ok(nizk_dleq_prove(p1, q1, &p2, &q2, sk, rng))
}

pub fn nizk_dleq_verify_batch(
    p1: &GroupElement,
    q1: &GroupElement,
    p2s: &[GroupElement],
    q2s: &[GroupElement],
    proof: &DleqProof,
) -> bool {
    if p2s.len() != q2s.len() || p2s.is_empty() {
        return false;
    }
    let (p2, q2) = batch_combine(p1, q1, p2s, q2s);
    nizk_dleq_verify(p1, q1, &p2, &q2, proof)
}

/// Privacy Pass key generation: `esk ←$ Z_q^*`, `epk = esk·G`.
pub fn pp_keygen<R: RngCore + CryptoRng>(
    params: &GroupParams,
    rng: &mut R,
) -> (Scalar, GroupElement) {
    let esk = random_nonzero_scalar(rng);
    (esk, esk * params.generator)
}

/// Blinds a token nonce: returns `(r, r·Hash(n))`.
pub fn pp_blind<R: RngCore + CryptoRng>(nonce: &[u8], rng: &mut R) -> (Scalar, GroupElement) {
    let r = random_nonzero_scalar(rng);
    (r, r * hash_to_group(nonce))
}

/// Returns `r^{-1}·R`.
pub fn pp_unblind(blinded: &GroupElement, r: &Scalar) -> Result<GroupElement, CryptoError> {
    if *r == Scalar::ZERO {
        return Err(CryptoError::ZeroBlinding);
    }
    Ok(r.invert() * blinded)
}

/// Redemption check `σ = esk·Hash(n)`.
pub fn pp_verify(nonce: &[u8], sigma: &GroupElement, esk: &Scalar) -> bool {
    esk * hash_to_group(nonce) == *sigma
}
