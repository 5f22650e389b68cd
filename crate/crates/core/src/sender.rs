//! Sender-side client state.
//!
//! A sender holds one epoch key per epoch, one signing key per channel address and the
//! openings of tag requests still in flight. The commitment to a channel key is made once
//! and reused for every request under that key, so the AS sees the same `com_s` and
//! charges the key budget only once per key.

use std::collections::BTreeMap;

use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::dummy::{self, DummyError, DummyQueries, DummyReply};
use crate::group::{nizk_dleq_prove, pp_keygen, pp_verify, GroupElement, GroupParams, Scalar};
use crate::primitives::{
    commit, verify, Commitment, Opening, SigKeypair, SIGNATURE_LEN, VERIFYING_KEY_LEN,
};
use crate::tag::{AccountId, EndorsementTag, FullEndorsementTag, SenderToken};

/// Abandoned tag requests are forgotten after this many seconds.
pub const PENDING_TTL: u64 = 600;
/// Maximum accepted distance between the tag timestamp and the local clock.
pub const MAX_CLOCK_SKEW: u64 = 120;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SenderError {
    #[error("unknown channel key")]
    UnknownChannel,
    #[error("no tag request pending for these commitments")]
    NoPendingRequest,
    #[error("tag timestamp {tau} is more than {MAX_CLOCK_SKEW}s from now ({now})")]
    Stale { tau: u64, now: u64 },
    #[error("AS signature on the tag does not verify")]
    BadSignature,
    #[error("X is not esk·G′ for this sender's epoch key")]
    WrongEpochKey,
    #[error("tag group parameters differ from the published ones")]
    GroupMismatch,
    #[error("no epoch key for epoch {0}")]
    NoEpochKey(u64),
    #[error(transparent)]
    Dummy(#[from] DummyError),
}

struct ChannelKey {
    address: Vec<u8>,
    keypair: SigKeypair,
    com: Commitment,
    op: Opening,
}

struct Pending {
    op_s: Opening,
    op_r: Opening,
    vk_s: [u8; VERIFYING_KEY_LEN],
    created: u64,
}

pub struct SenderState {
    id: AccountId,
    as_pk: [u8; VERIFYING_KEY_LEN],
    params: GroupParams,
    epoch_dur: u64,
    epoch_keys: BTreeMap<u64, (Scalar, GroupElement)>,
    channels: BTreeMap<[u8; VERIFYING_KEY_LEN], ChannelKey>,
    pending: BTreeMap<(Commitment, Commitment), Pending>,
}

impl SenderState {
    pub fn new(
        id: AccountId,
        as_pk: [u8; VERIFYING_KEY_LEN],
        params: GroupParams,
        epoch_dur: u64,
    ) -> Self {
        SenderState {
            id,
            as_pk,
            params,
            epoch_dur,
            epoch_keys: BTreeMap::new(),
            channels: BTreeMap::new(),
            pending: BTreeMap::new(),
        }
    }

    pub fn id(&self) -> AccountId {
        self.id
    }

    /// Returns the epoch key for `epoch`, generating it on first use. The flag is true
    /// when the key is new and still has to be registered with the AS.
    pub fn epoch_key<R: RngCore + CryptoRng>(
        &mut self,
        epoch: u64,
        rng: &mut R,
    ) -> (GroupElement, bool) {
        if let Some((_, epk)) = self.epoch_keys.get(&epoch) {
            return (*epk, false);
        }
        let (esk, epk) = pp_keygen(&self.params, rng);
        self.epoch_keys.insert(epoch, (esk, epk));
        (epk, true)
    }

    pub fn esk(&self, epoch: u64) -> Option<Scalar> {
        self.epoch_keys.get(&epoch).map(|(esk, _)| *esk)
    }

    /// Drops epoch keys older than `oldest`.
    pub fn forget_epoch_keys_before(&mut self, oldest: u64) {
        self.epoch_keys = self.epoch_keys.split_off(&oldest);
    }

    /// Creates a signing key bound to the sender address `address`. Keys are never shared
    /// between addresses.
    pub fn new_channel_key<R: RngCore + CryptoRng>(
        &mut self,
        address: &[u8],
        rng: &mut R,
    ) -> [u8; VERIFYING_KEY_LEN] {
        let keypair = SigKeypair::generate(rng);
        let vk = keypair.verifying_key();
        let (com, op) = commit(&vk, rng);
        self.channels.insert(
            vk,
            ChannelKey {
                address: address.to_vec(),
                keypair,
                com,
                op,
            },
        );
        vk
    }

    pub fn channel_address(&self, vk_s: &[u8; VERIFYING_KEY_LEN]) -> Option<&[u8]> {
        self.channels.get(vk_s).map(|c| c.address.as_slice())
    }

    pub fn pending_count(&self) -> usize {
        self.pending.len()
    }

    /// Commits to `vk_s` and the receiver address `h_r` for a new tag request.
    pub fn begin_tag_request<R: RngCore + CryptoRng>(
        &mut self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        h_r: &[u8],
        now: u64,
        rng: &mut R,
    ) -> Result<(Commitment, Commitment), SenderError> {
        self.expire_pending(now);
        let channel = self.channels.get(vk_s).ok_or(SenderError::UnknownChannel)?;
        let (com_r, op_r) = commit(h_r, rng);
        self.pending.insert(
            (channel.com, com_r),
            Pending {
                op_s: channel.op,
                op_r,
                vk_s: *vk_s,
                created: now,
            },
        );
        Ok((channel.com, com_r))
    }

    fn expire_pending(&mut self, now: u64) {
        self.pending
            .retain(|_, p| now.saturating_sub(p.created) <= PENDING_TTL);
    }

    /// Checks the AS response and derives the blind token with its proof.
    pub fn complete_tag<R: RngCore + CryptoRng>(
        &mut self,
        tag: EndorsementTag,
        now: u64,
        rng: &mut R,
    ) -> Result<FullEndorsementTag, SenderError> {
        self.expire_pending(now);
        let key = (tag.com_s, tag.com_r);
        if !self.pending.contains_key(&key) {
            return Err(SenderError::NoPendingRequest);
        }
        if tag.tau.abs_diff(now) > MAX_CLOCK_SKEW {
            return Err(SenderError::Stale { tau: tag.tau, now });
        }
        if tag.pp != self.params {
            return Err(SenderError::GroupMismatch);
        }
        if !verify(&self.as_pk, &tag.sigma, &tag.signed_bytes()) {
            return Err(SenderError::BadSignature);
        }
        let epoch = tag.tau / self.epoch_dur;
        let esk = self.esk(epoch).ok_or(SenderError::NoEpochKey(epoch))?;
        if esk * tag.g_prime != tag.x {
            return Err(SenderError::WrongEpochKey);
        }
        let pending = self.pending.remove(&key).expect("checked above");
        let r = esk * tag.q;
        let proof = nizk_dleq_prove(&tag.g_prime, &tag.x, &tag.q, &r, &esk, rng);
        Ok(FullEndorsementTag {
            op_s: pending.op_s,
            op_r: pending.op_r,
            vk_s: pending.vk_s,
            tag,
            proof,
            r,
        })
    }

    pub fn sign_channel_message(
        &self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        h_r: &[u8],
        message: &[u8],
    ) -> Result<[u8; SIGNATURE_LEN], SenderError> {
        let channel = self.channels.get(vk_s).ok_or(SenderError::UnknownChannel)?;
        Ok(channel.keypair.sign(&channel_message(h_r, message)))
    }

    /// Answers a dummy-token batch for the epoch named in `queries`.
    pub fn respond_dummies<R: RngCore + CryptoRng>(
        &self,
        queries: &DummyQueries,
        rng: &mut R,
    ) -> Result<DummyReply, SenderError> {
        let esk = self
            .esk(queries.epoch)
            .ok_or(SenderError::NoEpochKey(queries.epoch))?;
        Ok(dummy::sender_respond(&self.params, queries, &esk, rng)?)
    }
}

/// The signed payload `len(h_r) ‖ h_r ‖ m`, with a 2-byte big-endian length.
pub fn channel_message(h_r: &[u8], message: &[u8]) -> Vec<u8> {
    let len = u16::try_from(h_r.len()).expect("address fits a u16 length");
    let mut out = Vec::with_capacity(2 + h_r.len() + message.len());
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(h_r);
    out.extend_from_slice(message);
    out
}

pub fn verify_channel_signature(
    vk_s: &[u8; VERIFYING_KEY_LEN],
    h_r: &[u8],
    message: &[u8],
    signature: &[u8; SIGNATURE_LEN],
) -> bool {
    verify(vk_s, signature, &channel_message(h_r, message))
}

/// Accepts iff there are exactly `claimed_x` tokens, all nonces differ and every token
/// is valid under `esk`.
pub fn verify_report_proof(tokens: &[SenderToken], claimed_x: u64, esk: &Scalar) -> bool {
    if tokens.len() as u64 != claimed_x {
        return false;
    }
    let mut nonces: Vec<&[u8; 32]> = tokens.iter().map(|t| &t.nonce).collect();
    nonces.sort();
    if nonces.windows(2).any(|w| w[0] == w[1]) {
        return false;
    }
    tokens.iter().all(|t| pp_verify(&t.nonce, &t.sigma, esk))
}
