//! Receiver-side client state.
//!
//! `Chnls` maps a sender's channel key to the next time a report is allowed and a queue
//! of received tags, oldest first. Reporting reads the head without popping it; heads are
//! dropped only once they can no longer be reported.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::group::{nizk_dleq_verify, GroupParams};
use crate::primitives::{check_verifying_key, open, verify, SIGNATURE_LEN, VERIFYING_KEY_LEN};
use crate::sender::verify_channel_signature;
use crate::server::PublicParams;
use crate::tag::{FullEndorsementTag, Report};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReceiverConfig {
    pub epoch_dur: u64,
    pub expiry: u64,
    pub val_period: u64,
    pub report_lock: u64,
    pub pk: [u8; VERIFYING_KEY_LEN],
    pub pp: GroupParams,
}

impl From<&PublicParams> for ReceiverConfig {
    fn from(p: &PublicParams) -> Self {
        ReceiverConfig {
            epoch_dur: p.config.epoch_dur,
            expiry: p.config.expiry,
            val_period: p.config.val_period,
            report_lock: p.config.report_lock,
            pk: p.pk,
            pp: p.config.group,
        }
    }
}

impl ReceiverConfig {
    fn report_deadline(&self, tau: u64) -> u64 {
        tau + self.expiry * self.epoch_dur
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReceiverError {
    #[error("tag issued at {tau} is past its receiving window at {now}")]
    Stale { tau: u64, now: u64 },
    #[error("commitment to the sender key does not open")]
    SenderCommitment,
    #[error("commitment to the receiver address does not open")]
    ReceiverCommitment,
    #[error("malformed sender verification key")]
    BadSenderKey,
    #[error("AS signature on the tag does not verify")]
    BadSignature,
    #[error("token proof does not verify")]
    BadProof,
    #[error("tag group parameters differ from the published ones")]
    GroupMismatch,
    #[error("no channel for this sender key")]
    UnknownChannel,
    #[error("reporting locked until {until}")]
    Locked { until: u64 },
    #[error("no reportable tag for this channel")]
    NoTag,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChannelEntry {
    pub tau_rep: u64,
    pub tags: VecDeque<Report>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelCheck {
    Rejected,
    Accepted { endorsed: bool },
}

pub struct ReceiverState {
    h_r: Vec<u8>,
    config: ReceiverConfig,
    chnls: BTreeMap<[u8; VERIFYING_KEY_LEN], ChannelEntry>,
}

impl ReceiverState {
    pub fn new(h_r: &[u8], config: ReceiverConfig) -> Self {
        ReceiverState {
            h_r: h_r.to_vec(),
            config,
            chnls: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &ReceiverConfig {
        &self.config
    }

    pub fn address(&self) -> &[u8] {
        &self.h_r
    }

    pub fn channel(&self, vk_s: &[u8; VERIFYING_KEY_LEN]) -> Option<&ChannelEntry> {
        self.chnls.get(vk_s)
    }

    pub fn channel_count(&self) -> usize {
        self.chnls.len()
    }

    pub fn receive_tag(
        &mut self,
        full: &FullEndorsementTag,
        now: u64,
    ) -> Result<(), ReceiverError> {
        let tag = &full.tag;
        if now > tag.tau + self.config.val_period {
            return Err(ReceiverError::Stale { tau: tag.tau, now });
        }
        if tag.pp != self.config.pp {
            return Err(ReceiverError::GroupMismatch);
        }
        check_verifying_key(&full.vk_s).map_err(|_| ReceiverError::BadSenderKey)?;
        if !open(&tag.com_s, &full.op_s, &full.vk_s) {
            return Err(ReceiverError::SenderCommitment);
        }
        if !open(&tag.com_r, &full.op_r, &self.h_r) {
            return Err(ReceiverError::ReceiverCommitment);
        }
        if !verify(&self.config.pk, &tag.sigma, &tag.signed_bytes()) {
            return Err(ReceiverError::BadSignature);
        }
        if !nizk_dleq_verify(&tag.g_prime, &tag.x, &tag.q, &full.r, &full.proof) {
            return Err(ReceiverError::BadProof);
        }
        let entry = self.chnls.entry(full.vk_s).or_insert_with(|| ChannelEntry {
            tau_rep: now,
            tags: VecDeque::new(),
        });
        // Tags normally arrive in issuance order; insert after any equal τ otherwise.
        let at = entry
            .tags
            .iter()
            .rposition(|t| t.tag.tau <= tag.tau)
            .map_or(0, |i| i + 1);
        entry.tags.insert(at, full.report());
        Ok(())
    }

    /// Returns the oldest reportable tag and starts the report lock.
    pub fn report(
        &mut self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        now: u64,
    ) -> Result<Report, ReceiverError> {
        self.report_inner(vk_s, now, false)
    }

    /// Like [`report`](Self::report) but ignores the report lock. Doing so lets the
    /// AS link the reports and weakens the receiver's privacy.
    pub fn report_ignoring_lock(
        &mut self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        now: u64,
    ) -> Result<Report, ReceiverError> {
        self.report_inner(vk_s, now, true)
    }

    fn report_inner(
        &mut self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        now: u64,
        ignore_lock: bool,
    ) -> Result<Report, ReceiverError> {
        let config = self.config;
        let entry = self
            .chnls
            .get_mut(vk_s)
            .ok_or(ReceiverError::UnknownChannel)?;
        if !ignore_lock && now < entry.tau_rep {
            return Err(ReceiverError::Locked {
                until: entry.tau_rep,
            });
        }
        while entry
            .tags
            .front()
            .is_some_and(|t| config.report_deadline(t.tag.tau) < now)
        {
            entry.tags.pop_front();
        }
        let head = entry.tags.front().ok_or(ReceiverError::NoTag)?.clone();
        entry.tau_rep = entry.tau_rep.max(now + config.report_lock);
        Ok(head)
    }

    /// Pops expired heads and drops channels with nothing left to report or lock.
    pub fn garbage_collect(&mut self, now: u64) -> usize {
        let config = self.config;
        let mut removed = 0;
        self.chnls.retain(|_, entry| {
            while entry
                .tags
                .front()
                .is_some_and(|t| config.report_deadline(t.tag.tau) < now)
            {
                entry.tags.pop_front();
                removed += 1;
            }
            let keep = !entry.tags.is_empty() || entry.tau_rep >= now;
            if !keep {
                removed += 1;
            }
            keep
        });
        removed
    }

    /// Checks a channel message signature and whether the newest tag on the channel
    /// still endorses it.
    pub fn verify_channel_message(
        &self,
        vk_s: &[u8; VERIFYING_KEY_LEN],
        message: &[u8],
        signature: &[u8; SIGNATURE_LEN],
        now: u64,
    ) -> ChannelCheck {
        if !verify_channel_signature(vk_s, &self.h_r, message, signature) {
            return ChannelCheck::Rejected;
        }
        let endorsed = self
            .chnls
            .get(vk_s)
            .and_then(|e| e.tags.back())
            .is_some_and(|t| now <= t.tag.tau + self.config.val_period);
        ChannelCheck::Accepted { endorsed }
    }
}
