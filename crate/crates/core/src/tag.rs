//! Endorsement tags, sender tokens and account identifiers.

use std::fmt;

use crate::group::{encode_element, DleqProof, GroupElement, GroupParams};
use crate::primitives::{Commitment, Opening, SymKey, SIGNATURE_LEN, VERIFYING_KEY_LEN};
use crate::score::ReputationLevel;

pub const ACCOUNT_ID_LEN: usize = 16;
pub const NONCE_LEN: usize = 32;
/// `ID_s ‖ n ‖ r`.
pub const TAG_PLAINTEXT_LEN: usize = ACCOUNT_ID_LEN + NONCE_LEN + 32;
pub const TAG_CIPHERTEXT_LEN: usize = SymKey::ciphertext_len(TAG_PLAINTEXT_LEN);
/// Length of the signed prefix of an encoded tag.
pub const TAG_SIGNED_LEN: usize =
    32 + 32 + 8 + 1 + TAG_CIPHERTEXT_LEN + GroupParams::ENCODED_LEN + 3 * 32;
pub const TAG_LEN: usize = TAG_SIGNED_LEN + SIGNATURE_LEN;
pub const FULL_TAG_LEN: usize = TAG_LEN + 32 + 32 + VERIFYING_KEY_LEN + DleqProof::ENCODED_LEN + 32;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccountId(pub [u8; ACCOUNT_ID_LEN]);

impl AccountId {
    pub fn random<R: rand::RngCore>(rng: &mut R) -> Self {
        let mut id = [0u8; ACCOUNT_ID_LEN];
        rng.fill_bytes(&mut id);
        AccountId(id)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Debug for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "AccountId({})", self.to_hex())
    }
}

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A Privacy Pass token `(n, σ_s)` proving one received report.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SenderToken {
    pub nonce: [u8; NONCE_LEN],
    pub sigma: GroupElement,
}

/// The AS-signed tag `(com_s, com_r, τ, y_s, ct, pp, Q, G′, X, σ)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EndorsementTag {
    pub com_s: Commitment,
    pub com_r: Commitment,
    pub tau: u64,
    pub y_s: ReputationLevel,
    pub ct: [u8; TAG_CIPHERTEXT_LEN],
    pub pp: GroupParams,
    pub q: GroupElement,
    pub g_prime: GroupElement,
    pub x: GroupElement,
    pub sigma: [u8; SIGNATURE_LEN],
}

impl EndorsementTag {
    /// Bytes covered by the AS signature: every field before `σ`, in wire order.
    pub fn signed_bytes(&self) -> [u8; TAG_SIGNED_LEN] {
        signed_bytes(
            &self.com_s,
            &self.com_r,
            self.tau,
            self.y_s,
            &self.ct,
            &self.pp,
            &self.q,
            &self.g_prime,
            &self.x,
        )
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn signed_bytes(
    com_s: &Commitment,
    com_r: &Commitment,
    tau: u64,
    y_s: ReputationLevel,
    ct: &[u8; TAG_CIPHERTEXT_LEN],
    pp: &GroupParams,
    q: &GroupElement,
    g_prime: &GroupElement,
    x: &GroupElement,
) -> [u8; TAG_SIGNED_LEN] {
    let mut out = [0u8; TAG_SIGNED_LEN];
    let mut at = 0;
    let mut put = |bytes: &[u8]| {
        out[at..at + bytes.len()].copy_from_slice(bytes);
        at += bytes.len();
    };
    put(&com_s.0);
    put(&com_r.0);
    put(&tau.to_be_bytes());
    put(&[y_s.ordinal()]);
    put(ct);
    put(&pp.to_bytes());
    put(&encode_element(q));
    put(&encode_element(g_prime));
    put(&encode_element(x));
    debug_assert_eq!(at, TAG_SIGNED_LEN);
    out
}

/// What the sender hands to a receiver: the tag plus openings, channel key and the
/// blind token with its proof.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FullEndorsementTag {
    pub op_s: Opening,
    pub op_r: Opening,
    pub vk_s: [u8; VERIFYING_KEY_LEN],
    pub tag: EndorsementTag,
    pub proof: DleqProof,
    pub r: GroupElement,
}

/// The triple a receiver stores per tag and later submits as a report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Report {
    pub tag: EndorsementTag,
    pub proof: DleqProof,
    pub r: GroupElement,
}

impl FullEndorsementTag {
    pub fn report(&self) -> Report {
        Report {
            tag: self.tag.clone(),
            proof: self.proof,
            r: self.r,
        }
    }
}
