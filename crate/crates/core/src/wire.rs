//! Binary encodings and framing.
//!
//! Every message travels in a frame `version(1) ‖ msg_type(1) ‖ length(4, BE) ‖ body`.
//! Integers are big-endian; group elements and scalars use their canonical 32-byte
//! encodings; lists carry a 4-byte count, strings a 2-byte length. Decoding is strict:
//! any truncation, trailing byte or non-canonical field is an error, so a successful
//! decode re-encodes to the identical bytes.

use std::collections::BTreeMap;

use rust_decimal::Decimal;

use crate::dummy::{DummyQueries, DummyReply};
use crate::error::WireError;
use crate::group::{decode_element, encode_element, DleqProof, GroupElement, GroupParams};
use crate::noise::NoiseParams;
use crate::primitives::{Commitment, Opening, SIGNATURE_LEN};
use crate::score::{ReputationLevel, ScoreParams, Thresholds};
use crate::server::{AsConfig, NoiseBackend, ProofEntry, PublicParams, SenderEpochRecord};
use crate::tag::{
    AccountId, EndorsementTag, FullEndorsementTag, Report, SenderToken, FULL_TAG_LEN, NONCE_LEN,
    TAG_CIPHERTEXT_LEN, TAG_LEN,
};

pub const WIRE_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 6;
pub const REPORT_LEN: usize = TAG_LEN + DleqProof::ENCODED_LEN + 32;
pub const TOKEN_LEN: usize = NONCE_LEN + 32;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn new() -> Self {
        Writer(Vec::new())
    }
    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }
    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    pub fn u16(&mut self, v: u16) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }
    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }
    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }
    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.bytes(&v.to_be_bytes())
    }
    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.u64(v.to_bits())
    }
    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }
    pub fn element(&mut self, e: &GroupElement) -> &mut Self {
        self.bytes(&encode_element(e))
    }
    pub fn string(&mut self, s: &str) -> &mut Self {
        let len = u16::try_from(s.len()).expect("string fits a u16 length");
        self.u16(len).bytes(s.as_bytes())
    }
    pub fn count(&mut self, n: usize) -> &mut Self {
        self.u32(u32::try_from(n).expect("list fits a u32 count"))
    }
    pub fn option_u64(&mut self, v: Option<u64>) -> &mut Self {
        match v {
            Some(v) => self.u8(1).u64(v),
            None => self.u8(0),
        }
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.remaining() < n {
            return Err(WireError::Truncated {
                needed: n - self.remaining(),
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }
    pub fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_be_bytes(self.array()?))
    }
    pub fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.array()?))
    }
    pub fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.array()?))
    }
    pub fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_be_bytes(self.array()?))
    }
    pub fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_bits(self.u64()?))
    }
    pub fn bool(&mut self, field: &'static str) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(field_err(field, format!("boolean byte {v}"))),
        }
    }
    pub fn element(&mut self) -> Result<GroupElement, WireError> {
        Ok(decode_element(self.take(32)?)?)
    }
    pub fn string(&mut self, field: &'static str) -> Result<String, WireError> {
        let len = self.u16()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| field_err(field, "invalid utf-8".into()))
    }
    /// Reads a list count, rejecting counts that cannot fit in the remaining input.
    pub fn count(&mut self, min_item_len: usize) -> Result<usize, WireError> {
        let n = self.u32()? as usize;
        let needed = n.saturating_mul(min_item_len);
        if needed > self.remaining() {
            return Err(WireError::Truncated {
                needed: needed - self.remaining(),
            });
        }
        Ok(n)
    }
    pub fn option_u64(&mut self, field: &'static str) -> Result<Option<u64>, WireError> {
        Ok(if self.bool(field)? {
            Some(self.u64()?)
        } else {
            None
        })
    }
    pub fn finish(&self) -> Result<(), WireError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(WireError::Trailing(n)),
        }
    }
}

fn field_err(field: &'static str, reason: String) -> WireError {
    WireError::Field { field, reason }
}

/// Decodes a whole buffer with `f`, rejecting leftover bytes.
fn decode_all<T>(
    bytes: &[u8],
    f: impl FnOnce(&mut Reader) -> Result<T, WireError>,
) -> Result<T, WireError> {
    let mut r = Reader::new(bytes);
    let out = f(&mut r)?;
    r.finish()?;
    Ok(out)
}

// --- tags, reports and tokens ---------------------------------------------------------

fn put_tag(w: &mut Writer, tag: &EndorsementTag) {
    w.bytes(&tag.signed_bytes()).bytes(&tag.sigma);
}

fn read_tag(r: &mut Reader) -> Result<EndorsementTag, WireError> {
    let com_s = Commitment(r.array()?);
    let com_r = Commitment(r.array()?);
    let tau = r.u64()?;
    let y = r.u8()?;
    let y_s = ReputationLevel::from_ordinal(y)
        .ok_or_else(|| field_err("y_s", format!("reputation ordinal {y}")))?;
    let ct: [u8; TAG_CIPHERTEXT_LEN] = r.array()?;
    let pp = GroupParams::from_bytes(r.take(GroupParams::ENCODED_LEN)?)?;
    let q = r.element()?;
    let g_prime = r.element()?;
    let x = r.element()?;
    let sigma: [u8; SIGNATURE_LEN] = r.array()?;
    Ok(EndorsementTag {
        com_s,
        com_r,
        tau,
        y_s,
        ct,
        pp,
        q,
        g_prime,
        x,
        sigma,
    })
}

pub fn encode_tag(tag: &EndorsementTag) -> Vec<u8> {
    let mut w = Writer::new();
    put_tag(&mut w, tag);
    debug_assert_eq!(w.0.len(), TAG_LEN);
    w.0
}

pub fn decode_tag(bytes: &[u8]) -> Result<EndorsementTag, WireError> {
    decode_all(bytes, read_tag)
}

fn put_full_tag(w: &mut Writer, full: &FullEndorsementTag) {
    put_tag(w, &full.tag);
    w.bytes(&full.op_s.0)
        .bytes(&full.op_r.0)
        .bytes(&full.vk_s)
        .bytes(&full.proof.to_bytes())
        .element(&full.r);
}

fn read_full_tag(r: &mut Reader) -> Result<FullEndorsementTag, WireError> {
    let tag = read_tag(r)?;
    let op_s = Opening(r.array()?);
    let op_r = Opening(r.array()?);
    let vk_s = r.array()?;
    let proof = DleqProof::from_bytes(r.take(DleqProof::ENCODED_LEN)?)?;
    let big_r = r.element()?;
    Ok(FullEndorsementTag {
        op_s,
        op_r,
        vk_s,
        tag,
        proof,
        r: big_r,
    })
}

pub fn encode_full_tag(full: &FullEndorsementTag) -> Vec<u8> {
    let mut w = Writer::new();
    put_full_tag(&mut w, full);
    debug_assert_eq!(w.0.len(), FULL_TAG_LEN);
    w.0
}

pub fn decode_full_tag(bytes: &[u8]) -> Result<FullEndorsementTag, WireError> {
    decode_all(bytes, read_full_tag)
}

fn put_report(w: &mut Writer, report: &Report) {
    put_tag(w, &report.tag);
    w.bytes(&report.proof.to_bytes()).element(&report.r);
}

fn read_report(r: &mut Reader) -> Result<Report, WireError> {
    let tag = read_tag(r)?;
    let proof = DleqProof::from_bytes(r.take(DleqProof::ENCODED_LEN)?)?;
    let big_r = r.element()?;
    Ok(Report {
        tag,
        proof,
        r: big_r,
    })
}

pub fn encode_report(report: &Report) -> Vec<u8> {
    let mut w = Writer::new();
    put_report(&mut w, report);
    w.0
}

pub fn decode_report(bytes: &[u8]) -> Result<Report, WireError> {
    decode_all(bytes, read_report)
}

pub(crate) fn put_tokens(w: &mut Writer, tokens: &[SenderToken]) {
    w.count(tokens.len());
    for t in tokens {
        w.bytes(&t.nonce).element(&t.sigma);
    }
}

pub(crate) fn read_tokens(r: &mut Reader) -> Result<Vec<SenderToken>, WireError> {
    let n = r.count(TOKEN_LEN)?;
    (0..n)
        .map(|_| {
            Ok(SenderToken {
                nonce: r.array()?,
                sigma: r.element()?,
            })
        })
        .collect()
}

pub fn encode_token_list(tokens: &[SenderToken]) -> Vec<u8> {
    let mut w = Writer::new();
    put_tokens(&mut w, tokens);
    w.0
}

pub fn decode_token_list(bytes: &[u8]) -> Result<Vec<SenderToken>, WireError> {
    decode_all(bytes, read_tokens)
}

fn put_elements(w: &mut Writer, elements: &[GroupElement]) {
    w.count(elements.len());
    for e in elements {
        w.element(e);
    }
}

fn read_elements(r: &mut Reader) -> Result<Vec<GroupElement>, WireError> {
    let n = r.count(32)?;
    (0..n).map(|_| r.element()).collect()
}

fn put_decimal(w: &mut Writer, d: &Decimal) {
    w.string(&d.to_string());
}

fn read_decimal(r: &mut Reader, field: &'static str) -> Result<Decimal, WireError> {
    let s = r.string(field)?;
    let d: Decimal = s
        .parse()
        .map_err(|_| field_err(field, format!("decimal {s:?}")))?;
    if d.to_string() != s {
        return Err(field_err(field, format!("non-canonical decimal {s:?}")));
    }
    Ok(d)
}

// --- records (persistence) ------------------------------------------------------------

pub(crate) fn put_record(w: &mut Writer, record: &SenderEpochRecord) {
    match &record.epk {
        Some(epk) => w.u8(1).element(epk),
        None => w.u8(0),
    };
    w.f64(record.sc);
    put_vks(w, &record.vks);
    w.count(record.tokens.len());
    for (n, s) in &record.tokens {
        w.bytes(n).element(s);
    }
    match &record.dummies {
        Some(d) => {
            w.u8(1);
            put_tokens(w, d);
        }
        None => {
            w.u8(0);
        }
    }
}

pub(crate) fn put_vks(w: &mut Writer, vks: &BTreeMap<Commitment, u64>) {
    w.count(vks.len());
    for (c, exp) in vks {
        w.bytes(&c.0).u64(*exp);
    }
}

pub(crate) fn read_vks(r: &mut Reader) -> Result<BTreeMap<Commitment, u64>, WireError> {
    let n = r.count(40)?;
    let mut vks = BTreeMap::new();
    let mut last: Option<Commitment> = None;
    for _ in 0..n {
        let c = Commitment(r.array()?);
        if last.is_some_and(|l| l >= c) {
            return Err(field_err("vks", "entries not strictly ascending".into()));
        }
        last = Some(c);
        vks.insert(c, r.u64()?);
    }
    Ok(vks)
}

pub(crate) fn read_record(r: &mut Reader) -> Result<SenderEpochRecord, WireError> {
    let epk = if r.bool("epk")? {
        Some(r.element()?)
    } else {
        None
    };
    let sc = r.f64()?;
    let vks = read_vks(r)?;
    let n = r.count(TOKEN_LEN)?;
    let mut tokens = BTreeMap::new();
    let mut last: Option<[u8; NONCE_LEN]> = None;
    for _ in 0..n {
        let nonce: [u8; NONCE_LEN] = r.array()?;
        if last.is_some_and(|l| l >= nonce) {
            return Err(field_err("tokens", "nonces not strictly ascending".into()));
        }
        last = Some(nonce);
        tokens.insert(nonce, r.element()?);
    }
    let dummies = if r.bool("dummies")? {
        Some(read_tokens(r)?)
    } else {
        None
    };
    Ok(SenderEpochRecord {
        epk,
        sc,
        vks,
        tokens,
        dummies,
    })
}

pub(crate) fn put_proof_entry(w: &mut Writer, entry: &ProofEntry) {
    w.option_u64(entry.token_epoch)
        .i64(entry.score_count)
        .f64(entry.new_sc);
    put_tokens(w, &entry.shown);
}

pub(crate) fn read_proof_entry(r: &mut Reader) -> Result<ProofEntry, WireError> {
    Ok(ProofEntry {
        token_epoch: r.option_u64("token_epoch")?,
        score_count: r.i64()?,
        new_sc: r.f64()?,
        shown: read_tokens(r)?,
    })
}

// --- service messages -----------------------------------------------------------------

/// Outcome code carried by [`Status`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum StatusCode {
    Ok = 0,
    UnknownAccount = 1,
    DuplicateAccount = 2,
    EpochKeySet = 3,
    NoEpochKey = 4,
    KeyBudget = 5,
    Expired = 6,
    BadSignature = 7,
    BadProof = 8,
    BadCiphertext = 9,
    UnknownEpoch = 10,
    RolloverPending = 11,
    ClockBehind = 12,
    RollOrder = 13,
    DummySession = 14,
    Malformed = 15,
    Internal = 16,
    Unsupported = 17,
}

impl StatusCode {
    const ALL: [StatusCode; 18] = [
        StatusCode::Ok,
        StatusCode::UnknownAccount,
        StatusCode::DuplicateAccount,
        StatusCode::EpochKeySet,
        StatusCode::NoEpochKey,
        StatusCode::KeyBudget,
        StatusCode::Expired,
        StatusCode::BadSignature,
        StatusCode::BadProof,
        StatusCode::BadCiphertext,
        StatusCode::UnknownEpoch,
        StatusCode::RolloverPending,
        StatusCode::ClockBehind,
        StatusCode::RollOrder,
        StatusCode::DummySession,
        StatusCode::Malformed,
        StatusCode::Internal,
        StatusCode::Unsupported,
    ];

    pub fn from_u8(v: u8) -> Option<Self> {
        Self::ALL.get(v as usize).copied()
    }

    /// Short machine-readable label.
    pub fn label(self) -> &'static str {
        match self {
            StatusCode::Ok => "ok",
            StatusCode::UnknownAccount => "unknown-account",
            StatusCode::DuplicateAccount => "duplicate-account",
            StatusCode::EpochKeySet => "epoch-key-set",
            StatusCode::NoEpochKey => "no-epoch-key",
            StatusCode::KeyBudget => "key-budget",
            StatusCode::Expired => "expired",
            StatusCode::BadSignature => "bad-signature",
            StatusCode::BadProof => "bad-proof",
            StatusCode::BadCiphertext => "bad-ciphertext",
            StatusCode::UnknownEpoch => "unknown-epoch",
            StatusCode::RolloverPending => "rollover-pending",
            StatusCode::ClockBehind => "clock-behind",
            StatusCode::RollOrder => "roll-order",
            StatusCode::DummySession => "dummy-session",
            StatusCode::Malformed => "malformed",
            StatusCode::Internal => "internal",
            StatusCode::Unsupported => "unsupported",
        }
    }
}

/// A response: status, human-readable reason and an optional nested frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Status {
    pub code: StatusCode,
    pub reason: String,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RollSummary {
    pub epoch: u64,
    pub outcomes: Vec<(AccountId, f64, u64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreInfo {
    pub epoch: u64,
    pub sc: f64,
    pub level: ReputationLevel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProofMessage {
    pub epoch: u64,
    pub token_epoch: Option<u64>,
    pub tokens: Vec<SenderToken>,
}

#[derive(Clone, Debug)]
pub enum Message {
    Tag(EndorsementTag),
    FullTag(FullEndorsementTag),
    Report(Report),
    TokenList(Vec<SenderToken>),
    Register {
        id: AccountId,
    },
    EpochKey {
        id: AccountId,
        epk: GroupElement,
    },
    TagRequest {
        id: AccountId,
        com_s: Commitment,
        com_r: Commitment,
    },
    ProofRequest {
        id: AccountId,
        epoch: u64,
    },
    EpochRoll {
        epoch: u64,
    },
    ClockSet {
        now: u64,
    },
    ScoreQuery {
        id: AccountId,
    },
    Status(Status),
    Params(PublicParams),
    RollSummary(RollSummary),
    Proof(ProofMessage),
    ScoreInfo(ScoreInfo),
    DummyStart {
        id: AccountId,
        token_epoch: u64,
    },
    DummyQueries {
        batch_id: u64,
        queries: DummyQueries,
    },
    DummyReply {
        id: AccountId,
        batch_id: u64,
        reply: DummyReply,
    },
}

pub mod msg_type {
    pub const TAG: u8 = 0x01;
    pub const FULL_TAG: u8 = 0x02;
    pub const REPORT: u8 = 0x03;
    pub const TOKEN_LIST: u8 = 0x04;
    pub const REGISTER: u8 = 0x10;
    pub const EPOCH_KEY: u8 = 0x11;
    pub const TAG_REQUEST: u8 = 0x12;
    pub const PROOF_REQUEST: u8 = 0x13;
    pub const EPOCH_ROLL: u8 = 0x14;
    pub const CLOCK_SET: u8 = 0x15;
    pub const SCORE_QUERY: u8 = 0x16;
    pub const STATUS: u8 = 0x20;
    pub const PARAMS: u8 = 0x21;
    pub const ROLL_SUMMARY: u8 = 0x22;
    pub const PROOF: u8 = 0x23;
    pub const SCORE_INFO: u8 = 0x24;
    pub const DUMMY_START: u8 = 0x30;
    pub const DUMMY_QUERIES: u8 = 0x31;
    pub const DUMMY_REPLY: u8 = 0x32;

    pub const ALL: [u8; 19] = [
        TAG,
        FULL_TAG,
        REPORT,
        TOKEN_LIST,
        REGISTER,
        EPOCH_KEY,
        TAG_REQUEST,
        PROOF_REQUEST,
        EPOCH_ROLL,
        CLOCK_SET,
        SCORE_QUERY,
        STATUS,
        PARAMS,
        ROLL_SUMMARY,
        PROOF,
        SCORE_INFO,
        DUMMY_START,
        DUMMY_QUERIES,
        DUMMY_REPLY,
    ];
}

/// `version ‖ msg_type ‖ length ‖ body`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WireFrame {
    pub version: u8,
    pub msg_type: u8,
    pub body: Vec<u8>,
}

impl WireFrame {
    pub fn new(msg_type: u8, body: Vec<u8>) -> Self {
        WireFrame {
            version: WIRE_VERSION,
            msg_type,
            body,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.body.len());
        out.push(self.version);
        out.push(self.msg_type);
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let (frame, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(WireError::Trailing(bytes.len() - used));
        }
        Ok(frame)
    }

    /// Decodes one frame from the front of `bytes`, returning it and its encoded length.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), WireError> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(WireError::Version(version));
        }
        let msg_type = r.u8()?;
        let len = r.u32()? as usize;
        let body = r.take(len)?.to_vec();
        Ok((
            WireFrame {
                version,
                msg_type,
                body,
            },
            FRAME_HEADER_LEN + len,
        ))
    }
}

fn put_config(w: &mut Writer, c: &AsConfig) {
    w.u64(c.epoch_dur)
        .u64(c.expiry)
        .u64(c.val_period)
        .u64(c.report_lock)
        .i64(c.b_vk)
        .i64(c.score.k)
        .i64(c.score.cap)
        .f64(c.score.recovery);
    for cut in c.thresholds.cuts() {
        w.f64(cut);
    }
    put_decimal(w, &c.noise.mu);
    put_decimal(w, &c.noise.noise_std);
    w.i64(c.noise.sensitivity)
        .f64(c.sc_init)
        .bytes(&c.group.to_bytes())
        .u8(match c.noise_backend {
            NoiseBackend::Gaussian => 0,
            NoiseBackend::Dummy => 1,
        })
        .u32(c.dummy_batch);
}

fn read_config(r: &mut Reader) -> Result<AsConfig, WireError> {
    let epoch_dur = r.u64()?;
    let expiry = r.u64()?;
    let val_period = r.u64()?;
    let report_lock = r.u64()?;
    let b_vk = r.i64()?;
    let score = ScoreParams {
        k: r.i64()?,
        cap: r.i64()?,
        recovery: r.f64()?,
    };
    let cuts = [r.f64()?, r.f64()?, r.f64()?];
    let thresholds = Thresholds::new(cuts).map_err(|e| field_err("thresholds", e.to_string()))?;
    let noise = NoiseParams {
        mu: read_decimal(r, "mu")?,
        noise_std: read_decimal(r, "sigma")?,
        sensitivity: r.i64()?,
    };
    let sc_init = r.f64()?;
    let group = GroupParams::from_bytes(r.take(GroupParams::ENCODED_LEN)?)?;
    let noise_backend = match r.u8()? {
        0 => NoiseBackend::Gaussian,
        1 => NoiseBackend::Dummy,
        v => return Err(field_err("noise_backend", format!("backend {v}"))),
    };
    let dummy_batch = r.u32()?;
    Ok(AsConfig {
        epoch_dur,
        expiry,
        val_period,
        report_lock,
        b_vk,
        score,
        thresholds,
        noise,
        sc_init,
        group,
        noise_backend,
        dummy_batch,
    })
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Tag(_) => TAG,
            Message::FullTag(_) => FULL_TAG,
            Message::Report(_) => REPORT,
            Message::TokenList(_) => TOKEN_LIST,
            Message::Register { .. } => REGISTER,
            Message::EpochKey { .. } => EPOCH_KEY,
            Message::TagRequest { .. } => TAG_REQUEST,
            Message::ProofRequest { .. } => PROOF_REQUEST,
            Message::EpochRoll { .. } => EPOCH_ROLL,
            Message::ClockSet { .. } => CLOCK_SET,
            Message::ScoreQuery { .. } => SCORE_QUERY,
            Message::Status(_) => STATUS,
            Message::Params(_) => PARAMS,
            Message::RollSummary(_) => ROLL_SUMMARY,
            Message::Proof(_) => PROOF,
            Message::ScoreInfo(_) => SCORE_INFO,
            Message::DummyStart { .. } => DUMMY_START,
            Message::DummyQueries { .. } => DUMMY_QUERIES,
            Message::DummyReply { .. } => DUMMY_REPLY,
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self {
            Message::Tag(t) => put_tag(&mut w, t),
            Message::FullTag(t) => put_full_tag(&mut w, t),
            Message::Report(rep) => put_report(&mut w, rep),
            Message::TokenList(tokens) => put_tokens(&mut w, tokens),
            Message::Register { id } | Message::ScoreQuery { id } => {
                w.bytes(&id.0);
            }
            Message::EpochKey { id, epk } => {
                w.bytes(&id.0).element(epk);
            }
            Message::TagRequest { id, com_s, com_r } => {
                w.bytes(&id.0).bytes(&com_s.0).bytes(&com_r.0);
            }
            Message::ProofRequest { id, epoch } => {
                w.bytes(&id.0).u64(*epoch);
            }
            Message::EpochRoll { epoch } => {
                w.u64(*epoch);
            }
            Message::ClockSet { now } => {
                w.u64(*now);
            }
            Message::Status(s) => {
                w.u8(s.code as u8).string(&s.reason).bytes(&s.payload);
            }
            Message::Params(p) => {
                w.bytes(&p.pk).u64(p.now);
                put_config(&mut w, &p.config);
            }
            Message::RollSummary(s) => {
                w.u64(s.epoch).count(s.outcomes.len());
                for (id, sc, n) in &s.outcomes {
                    w.bytes(&id.0).f64(*sc).u64(*n);
                }
            }
            Message::Proof(p) => {
                w.u64(p.epoch).option_u64(p.token_epoch);
                put_tokens(&mut w, &p.tokens);
            }
            Message::ScoreInfo(s) => {
                w.u64(s.epoch).f64(s.sc).u8(s.level.ordinal());
            }
            Message::DummyStart { id, token_epoch } => {
                w.bytes(&id.0).u64(*token_epoch);
            }
            Message::DummyQueries { batch_id, queries } => {
                w.u64(*batch_id).u64(queries.epoch);
                put_elements(&mut w, &queries.queries);
            }
            Message::DummyReply {
                id,
                batch_id,
                reply,
            } => {
                w.bytes(&id.0).u64(*batch_id).count(reply.bits.len());
                for b in &reply.bits {
                    w.bool(*b);
                }
                put_elements(&mut w, &reply.responses);
                w.bytes(&reply.proof.to_bytes());
            }
        }
        w.0
    }

    pub fn encode(&self) -> Vec<u8> {
        WireFrame::new(self.msg_type(), self.encode_body()).encode()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let frame = WireFrame::decode(bytes)?;
        Self::decode_body(frame.msg_type, &frame.body)
    }

    /// Decodes `bytes` and insists on a particular message type.
    pub fn decode_expect(bytes: &[u8], expected: u8) -> Result<Self, WireError> {
        let frame = WireFrame::decode(bytes)?;
        if frame.msg_type != expected {
            return Err(WireError::UnexpectedType {
                expected,
                actual: frame.msg_type,
            });
        }
        Self::decode_body(frame.msg_type, &frame.body)
    }

    pub fn decode_body(msg_type: u8, body: &[u8]) -> Result<Self, WireError> {
        use msg_type::*;
        decode_all(body, |r| {
            let id = |r: &mut Reader| -> Result<AccountId, WireError> { Ok(AccountId(r.array()?)) };
            Ok(match msg_type {
                TAG => Message::Tag(read_tag(r)?),
                FULL_TAG => Message::FullTag(read_full_tag(r)?),
                REPORT => Message::Report(read_report(r)?),
                TOKEN_LIST => Message::TokenList(read_tokens(r)?),
                REGISTER => Message::Register { id: id(r)? },
                SCORE_QUERY => Message::ScoreQuery { id: id(r)? },
                EPOCH_KEY => Message::EpochKey {
                    id: id(r)?,
                    epk: r.element()?,
                },
                TAG_REQUEST => Message::TagRequest {
                    id: id(r)?,
                    com_s: Commitment(r.array()?),
                    com_r: Commitment(r.array()?),
                },
                PROOF_REQUEST => Message::ProofRequest {
                    id: id(r)?,
                    epoch: r.u64()?,
                },
                EPOCH_ROLL => Message::EpochRoll { epoch: r.u64()? },
                CLOCK_SET => Message::ClockSet { now: r.u64()? },
                STATUS => {
                    let c = r.u8()?;
                    let code = StatusCode::from_u8(c)
                        .ok_or_else(|| field_err("status", format!("code {c}")))?;
                    Message::Status(Status {
                        code,
                        reason: r.string("reason")?,
                        payload: r.rest().to_vec(),
                    })
                }
                PARAMS => Message::Params(PublicParams {
                    pk: r.array()?,
                    now: r.u64()?,
                    config: read_config(r)?,
                }),
                ROLL_SUMMARY => {
                    let epoch = r.u64()?;
                    let n = r.count(32)?;
                    let outcomes = (0..n)
                        .map(|_| Ok((id(r)?, r.f64()?, r.u64()?)))
                        .collect::<Result<_, WireError>>()?;
                    Message::RollSummary(RollSummary { epoch, outcomes })
                }
                PROOF => Message::Proof(ProofMessage {
                    epoch: r.u64()?,
                    token_epoch: r.option_u64("token_epoch")?,
                    tokens: read_tokens(r)?,
                }),
                SCORE_INFO => {
                    let epoch = r.u64()?;
                    let sc = r.f64()?;
                    let l = r.u8()?;
                    let level = ReputationLevel::from_ordinal(l)
                        .ok_or_else(|| field_err("level", format!("reputation ordinal {l}")))?;
                    Message::ScoreInfo(ScoreInfo { epoch, sc, level })
                }
                DUMMY_START => Message::DummyStart {
                    id: id(r)?,
                    token_epoch: r.u64()?,
                },
                DUMMY_QUERIES => Message::DummyQueries {
                    batch_id: r.u64()?,
                    queries: DummyQueries {
                        epoch: r.u64()?,
                        queries: read_elements(r)?,
                    },
                },
                DUMMY_REPLY => {
                    let id = id(r)?;
                    let batch_id = r.u64()?;
                    let n = r.count(1)?;
                    let bits = (0..n).map(|_| r.bool("bit")).collect::<Result<_, _>>()?;
                    let responses = read_elements(r)?;
                    let proof = DleqProof::from_bytes(r.take(DleqProof::ENCODED_LEN)?)?;
                    Message::DummyReply {
                        id,
                        batch_id,
                        reply: DummyReply {
                            bits,
                            responses,
                            proof,
                        },
                    }
                }
                other => return Err(WireError::MessageType(other)),
            })
        })
    }
}

impl Status {
    pub fn ok() -> Self {
        Status {
            code: StatusCode::Ok,
            reason: String::new(),
            payload: Vec::new(),
        }
    }

    pub fn ok_with(message: &Message) -> Self {
        Status {
            code: StatusCode::Ok,
            reason: String::new(),
            payload: message.encode(),
        }
    }

    pub fn error(code: StatusCode, reason: impl Into<String>) -> Self {
        Status {
            code,
            reason: reason.into(),
            payload: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{nizk_dleq_prove, random_nonzero_scalar};
    use crate::primitives::commit;
    use proptest::prelude::*;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    pub(crate) fn random_tag(rng: &mut ChaCha20Rng) -> EndorsementTag {
        let mut ct = [0u8; TAG_CIPHERTEXT_LEN];
        rng.fill_bytes(&mut ct);
        let mut sigma = [0u8; SIGNATURE_LEN];
        rng.fill_bytes(&mut sigma);
        let g = GroupParams::default().generator;
        EndorsementTag {
            com_s: commit(b"a", rng).0,
            com_r: commit(b"b", rng).0,
            tau: rng.next_u64(),
            y_s: ReputationLevel::from_ordinal((rng.next_u32() % 4) as u8).unwrap(),
            ct,
            pp: GroupParams::default(),
            q: random_nonzero_scalar(rng) * g,
            g_prime: random_nonzero_scalar(rng) * g,
            x: random_nonzero_scalar(rng) * g,
            sigma,
        }
    }

    fn random_full(rng: &mut ChaCha20Rng) -> FullEndorsementTag {
        let tag = random_tag(rng);
        let sk = random_nonzero_scalar(rng);
        let r = sk * tag.q;
        let proof = nizk_dleq_prove(&tag.g_prime, &tag.x, &tag.q, &r, &sk, rng);
        let mut vk_s = [0u8; 32];
        rng.fill_bytes(&mut vk_s);
        FullEndorsementTag {
            op_s: commit(b"a", rng).1,
            op_r: commit(b"b", rng).1,
            vk_s,
            tag,
            proof,
            r,
        }
    }

    #[test]
    fn tag_lengths_and_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..50 {
            let tag = random_tag(&mut rng);
            let bytes = encode_tag(&tag);
            assert_eq!(bytes.len(), 378);
            assert_eq!(&bytes[..314], &tag.signed_bytes());
            assert_eq!(decode_tag(&bytes).unwrap(), tag);
            assert!(matches!(
                decode_tag(&bytes[..377]),
                Err(WireError::Truncated { .. })
            ));
            let mut long = bytes.clone();
            long.push(0);
            assert_eq!(decode_tag(&long), Err(WireError::Trailing(1)));

            let full = random_full(&mut rng);
            let bytes = encode_full_tag(&full);
            assert_eq!(bytes.len(), 570);
            assert_eq!(decode_full_tag(&bytes).unwrap(), full);
            assert!(decode_full_tag(&bytes[..569]).is_err());

            let report = full.report();
            let bytes = encode_report(&report);
            assert_eq!(bytes.len(), REPORT_LEN);
            assert_eq!(decode_report(&bytes).unwrap(), report);
        }
    }

    #[test]
    fn bad_fields_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let mut bytes = encode_tag(&random_tag(&mut rng));
        bytes[72] = 4;
        assert!(matches!(
            decode_tag(&bytes),
            Err(WireError::Field { field: "y_s", .. })
        ));
        let mut bytes = encode_tag(&random_tag(&mut rng));
        bytes[185] = 2;
        assert!(matches!(decode_tag(&bytes), Err(WireError::Crypto(_))));
        let mut bytes = encode_tag(&random_tag(&mut rng));
        bytes[218..250].copy_from_slice(&[0xff; 32]);
        assert!(matches!(decode_tag(&bytes), Err(WireError::Crypto(_))));
    }

    #[test]
    fn token_list_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let g = GroupParams::default().generator;
        let tokens: Vec<SenderToken> = (0..7)
            .map(|_| {
                let mut nonce = [0u8; 32];
                rng.fill_bytes(&mut nonce);
                SenderToken {
                    nonce,
                    sigma: random_nonzero_scalar(&mut rng) * g,
                }
            })
            .collect();
        let bytes = encode_token_list(&tokens);
        assert_eq!(bytes.len(), 4 + 7 * 64);
        assert_eq!(decode_token_list(&bytes).unwrap(), tokens);
        assert!(decode_token_list(&bytes[..bytes.len() - 1]).is_err());
        // A count that cannot fit does not allocate.
        assert!(decode_token_list(&[0xff, 0xff, 0xff, 0xff]).is_err());
    }

    #[test]
    fn frame_checks() {
        let frame = WireFrame::new(msg_type::REGISTER, vec![1; 16]);
        let bytes = frame.encode();
        assert_eq!(&bytes[..6], &[1, 0x10, 0, 0, 0, 16]);
        assert_eq!(WireFrame::decode(&bytes).unwrap(), frame);
        let mut v2 = bytes.clone();
        v2[0] = 2;
        assert_eq!(WireFrame::decode(&v2), Err(WireError::Version(2)));
        assert!(WireFrame::decode(&bytes[..10]).is_err());
        let mut unknown = bytes.clone();
        unknown[1] = 0x7f;
        assert!(matches!(
            Message::decode(&unknown),
            Err(WireError::MessageType(0x7f))
        ));
        assert!(matches!(
            Message::decode_expect(&bytes, msg_type::TAG),
            Err(WireError::UnexpectedType { .. })
        ));
    }

    #[test]
    fn params_round_trip() {
        let params = PublicParams {
            pk: [9; 32],
            config: AsConfig::default(),
            now: 77,
        };
        let bytes = Message::Params(params.clone()).encode();
        match Message::decode(&bytes).unwrap() {
            Message::Params(p) => {
                assert_eq!(p.pk, params.pk);
                assert_eq!(p.config, params.config);
                assert_eq!(p.now, 77);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]
        #[test]
        fn random_frames_never_panic(msg_type in prop::sample::select(msg_type::ALL.to_vec()), body in prop::collection::vec(any::<u8>(), 0..700)) {
            let frame = WireFrame::new(msg_type, body).encode();
            if let Ok(msg) = Message::decode(&frame) {
                prop_assert_eq!(msg.encode(), frame);
            }
        }
    }
}
