//! The Accountability Server.
//!
//! State lives in a per-sender map of epoch records guarded by a reader/writer lock;
//! each account additionally has its own mutex so that mutations of one sender's state
//! are serialized while different senders proceed in parallel. Rolling an epoch takes
//! the write lock and therefore runs exclusively.

use std::collections::BTreeMap;
use std::path::Path;

use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use crate::dummy::{self, DummyQueries, DummyReply, DummySecrets};
use crate::error::ParamError;
use crate::group::{
    decode_scalar, nizk_dleq_verify, pp_blind, pp_unblind, random_nonzero_scalar, GroupElement,
    GroupParams,
};
use crate::noise::{NoiseParams, NoiseSampler};
use crate::primitives::{verify, Commitment, SigKeypair, SymKey, VERIFYING_KEY_LEN};
use crate::score::{reputation, upd, ReputationLevel, ScoreParams, Thresholds};
use crate::store::{Event, EventLog};
use crate::tag::{
    signed_bytes, AccountId, EndorsementTag, Report, SenderToken, ACCOUNT_ID_LEN, NONCE_LEN,
    TAG_CIPHERTEXT_LEN, TAG_PLAINTEXT_LEN,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseBackend {
    /// AS-sampled truncated Gaussian; noise tokens are omitted from the proof.
    Gaussian,
    /// Sender-assisted dummy tokens added to the proof, falling back to the Gaussian
    /// sampler for any sender/epoch without a completed batch.
    Dummy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsConfig {
    pub epoch_dur: u64,
    /// Expiry multiplier `E`.
    pub expiry: u64,
    pub val_period: u64,
    pub report_lock: u64,
    pub b_vk: i64,
    pub score: ScoreParams,
    pub thresholds: Thresholds,
    /// Noise distribution already scaled for `b_vk`.
    pub noise: NoiseParams,
    pub sc_init: f64,
    pub group: GroupParams,
    pub noise_backend: NoiseBackend,
    pub dummy_batch: u32,
}

impl Default for AsConfig {
    fn default() -> Self {
        let noise = crate::noise::lookup_params(1, 1).expect("row present");
        AsConfig {
            epoch_dur: 3600,
            expiry: 2,
            val_period: 3600,
            report_lock: 7200,
            b_vk: 1,
            score: ScoreParams {
                k: 2,
                cap: 100,
                recovery: 0.5,
            },
            thresholds: Thresholds::for_cap(100),
            noise,
            sc_init: 100.0,
            group: GroupParams::default(),
            noise_backend: NoiseBackend::Gaussian,
            dummy_batch: dummy::batch_size_for_sigma(noise.std_f64()),
        }
    }
}

impl AsConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        if self.epoch_dur == 0 {
            return Err(ParamError::EpochDuration);
        }
        if self.expiry < 2 {
            return Err(ParamError::Expiry(self.expiry));
        }
        let val_bound = (self.expiry - 1) * self.epoch_dur;
        if self.val_period > val_bound {
            return Err(ParamError::ValidityPeriod {
                val_period: self.val_period,
                bound: val_bound,
            });
        }
        let lock_bound = self.expiry * self.epoch_dur;
        if self.report_lock < lock_bound {
            return Err(ParamError::ReportLock {
                report_lock: self.report_lock,
                bound: lock_bound,
            });
        }
        if self.b_vk < 1 {
            return Err(ParamError::Sensitivity(self.b_vk));
        }
        self.score.validate()?;
        self.noise.validate()?;
        if self.noise.sensitivity != self.b_vk {
            return Err(ParamError::SensitivityMismatch {
                noise: self.noise.sensitivity,
                b_vk: self.b_vk,
            });
        }
        if self.sc_init.is_nan() || self.sc_init > self.score.cap as f64 {
            return Err(ParamError::InitialScore(self.sc_init));
        }
        if self.dummy_batch == 0 {
            return Err(ParamError::DummyBatch);
        }
        Ok(())
    }

    pub fn epoch_of(&self, t: u64) -> u64 {
        t / self.epoch_dur
    }

    /// Last instant at which a tag issued at `tau` may be reported.
    pub fn report_deadline(&self, tau: u64) -> u64 {
        tau + self.expiry * self.epoch_dur
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsError {
    #[error("unknown account")]
    UnknownAccount,
    #[error("account already registered")]
    DuplicateAccount,
    #[error("epoch key already registered for this epoch")]
    EpochKeySet,
    #[error("no epoch key registered for this epoch")]
    NoEpochKey,
    #[error("verification key budget exhausted")]
    KeyBudget,
    #[error("tag expired for reporting")]
    Expired,
    #[error("invalid signature")]
    BadSignature,
    #[error("invalid proof")]
    BadProof,
    #[error("invalid ciphertext")]
    BadCiphertext,
    #[error("no record for epoch {0}")]
    UnknownEpoch(u64),
    #[error("epoch {pending} must be rolled before time {now}")]
    RolloverPending { pending: u64, now: u64 },
    #[error("time {now} precedes the active epoch {active}")]
    ClockBehind { active: u64, now: u64 },
    #[error("epoch {requested} cannot be rolled, next is {expected}")]
    RollOrder { requested: u64, expected: u64 },
    #[error("dummy batch unknown, finished, or already completed for this epoch")]
    DummySession,
    #[error("dummy batch malformed: {0}")]
    DummyReply(String),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("persistence failure: {0}")]
    Store(String),
}

/// `DB[ID_s, i] = (epk, sc, vks, tokens)`, plus dummy tokens when that backend is used.
#[derive(Clone, Debug, PartialEq)]
pub struct SenderEpochRecord {
    pub epk: Option<GroupElement>,
    pub sc: f64,
    pub vks: BTreeMap<Commitment, u64>,
    pub tokens: BTreeMap<[u8; NONCE_LEN], GroupElement>,
    /// Dummy tokens from a completed batch; `None` until one completes.
    pub dummies: Option<Vec<SenderToken>>,
}

impl SenderEpochRecord {
    fn fresh(sc: f64, vks: BTreeMap<Commitment, u64>) -> Self {
        SenderEpochRecord {
            epk: None,
            sc,
            vks,
            tokens: BTreeMap::new(),
            dummies: None,
        }
    }
}

/// What the AS shows a sender for the roll of epoch `epoch`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProofEntry {
    /// Epoch whose tokens were counted, `epoch - E`; absent in the first `E` epochs.
    pub token_epoch: Option<u64>,
    /// The noisy count that entered the score update (may be negative).
    pub score_count: i64,
    pub new_sc: f64,
    pub shown: Vec<SenderToken>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProofOfReports {
    pub epoch: u64,
    pub token_epoch: Option<u64>,
    pub tokens: Vec<SenderToken>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochOutcome {
    pub new_sc: f64,
    pub noisy_count: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportOutcome {
    Accepted,
    /// Already counted; nothing changed.
    Duplicate,
}

#[derive(Clone, Debug)]
pub struct PublicParams {
    pub pk: [u8; VERIFYING_KEY_LEN],
    pub config: AsConfig,
    pub now: u64,
}

#[derive(Default)]
struct Account {
    records: BTreeMap<u64, SenderEpochRecord>,
    proofs: BTreeMap<u64, ProofEntry>,
    dummy_sessions: BTreeMap<u64, DummySession>,
}

struct DummySession {
    token_epoch: u64,
    epk: GroupElement,
    queries: DummyQueries,
    secrets: DummySecrets,
}

impl Account {
    fn latest(&self) -> (u64, &SenderEpochRecord) {
        let (&e, r) = self
            .records
            .last_key_value()
            .expect("accounts hold a record");
        (e, r)
    }
}

#[derive(Default)]
struct Db {
    accounts: BTreeMap<AccountId, Mutex<Account>>,
    /// Last rolled epoch.
    rolled: Option<u64>,
}

pub struct AccountabilityServer {
    config: AsConfig,
    sym: SymKey,
    sig: SigKeypair,
    db: RwLock<Db>,
    log: Option<Mutex<EventLog>>,
    batch_ids: Mutex<u64>,
}

impl std::fmt::Debug for AccountabilityServer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AccountabilityServer")
            .field("pk", &self.sig.verifying_key())
            .finish_non_exhaustive()
    }
}

impl AccountabilityServer {
    /// Fresh symmetric and signature keys, an empty database and no persistence.
    pub fn setup<R: RngCore + CryptoRng>(config: AsConfig, rng: &mut R) -> Result<Self, AsError> {
        config.validate()?;
        Ok(Self::from_keys(
            config,
            SymKey::generate(rng),
            SigKeypair::generate(rng),
        ))
    }

    pub fn from_keys(config: AsConfig, sym: SymKey, sig: SigKeypair) -> Self {
        AccountabilityServer {
            config,
            sym,
            sig,
            db: RwLock::new(Db::default()),
            log: None,
            batch_ids: Mutex::new(0),
        }
    }

    /// Opens (or creates) an append-only log at `path` and rebuilds state from it.
    pub fn open<R: RngCore + CryptoRng>(
        config: AsConfig,
        path: &Path,
        rng: &mut R,
    ) -> Result<Self, AsError> {
        config.validate()?;
        let (mut log, events) = EventLog::open(path).map_err(|e| AsError::Store(e.to_string()))?;
        let mut events = events.into_iter();
        let mut server = match events.next() {
            Some(Event::Keys { sym, sig }) => Self::from_keys(
                config,
                SymKey::from_bytes(sym),
                SigKeypair::from_secret_bytes(&sig),
            ),
            Some(_) => return Err(AsError::Store("log does not start with keys".into())),
            None => {
                let server = Self::setup(config, rng)?;
                log.append(&Event::Keys {
                    sym: server.sym.to_bytes(),
                    sig: server.sig.secret_bytes(),
                })
                .map_err(|e| AsError::Store(e.to_string()))?;
                server
            }
        };
        for event in events {
            server.replay(event)?;
        }
        server.log = Some(Mutex::new(log));
        Ok(server)
    }

    fn replay(&mut self, event: Event) -> Result<(), AsError> {
        let db = self.db.get_mut();
        match event {
            Event::Keys { .. } => return Err(AsError::Store("duplicate key entry".into())),
            Event::Record { id, epoch, record } => {
                db.accounts
                    .entry(id)
                    .or_default()
                    .get_mut()
                    .records
                    .insert(epoch, record);
            }
            Event::Vks { id, epoch, vks } => {
                record_mut(db, &id, epoch)?.vks = vks;
            }
            Event::Token { id, epoch, token } => {
                record_mut(db, &id, epoch)?
                    .tokens
                    .insert(token.nonce, token.sigma);
            }
            Event::Dummies { id, epoch, tokens } => {
                record_mut(db, &id, epoch)?.dummies = Some(tokens);
            }
            Event::Proof { id, epoch, entry } => {
                db.accounts
                    .entry(id)
                    .or_default()
                    .get_mut()
                    .proofs
                    .insert(epoch, entry);
            }
            Event::Rolled { epoch } => {
                db.rolled = Some(epoch);
                let gc = self.config.gc_horizon(epoch);
                for account in db.accounts.values_mut() {
                    garbage_collect(account.get_mut(), gc);
                }
            }
        }
        Ok(())
    }

    fn persist(&self, event: Event) -> Result<(), AsError> {
        if let Some(log) = &self.log {
            log.lock()
                .append(&event)
                .map_err(|e| AsError::Store(e.to_string()))?;
        }
        Ok(())
    }

    pub fn config(&self) -> &AsConfig {
        &self.config
    }

    pub fn public_key(&self) -> [u8; VERIFYING_KEY_LEN] {
        self.sig.verifying_key()
    }

    pub fn public_params(&self, now: u64) -> PublicParams {
        PublicParams {
            pk: self.public_key(),
            config: self.config.clone(),
            now,
        }
    }

    /// The epoch open for registration and issuance, if any roll has happened.
    pub fn active_epoch(&self) -> Option<u64> {
        self.db.read().rolled.map(|r| r + 1)
    }

    fn current_epoch(&self, db: &Db, now: u64) -> Result<u64, AsError> {
        let epoch = self.config.epoch_of(now);
        match db.rolled {
            Some(r) if epoch > r + 1 => Err(AsError::RolloverPending {
                pending: r + 1,
                now,
            }),
            Some(r) if epoch < r + 1 => Err(AsError::ClockBehind { active: r + 1, now }),
            _ => Ok(epoch),
        }
    }

    pub fn account_count(&self) -> usize {
        self.db.read().accounts.len()
    }

    pub fn record(&self, id: &AccountId, epoch: u64) -> Option<SenderEpochRecord> {
        let db = self.db.read();
        let account = db.accounts.get(id)?.lock();
        account.records.get(&epoch).cloned()
    }

    /// Total stored sender tokens over all accounts and epochs.
    pub fn stored_token_count(&self) -> usize {
        let db = self.db.read();
        db.accounts
            .values()
            .map(|a| {
                a.lock()
                    .records
                    .values()
                    .map(|r| r.tokens.len())
                    .sum::<usize>()
            })
            .sum()
    }

    pub fn stored_record_count(&self) -> usize {
        let db = self.db.read();
        db.accounts.values().map(|a| a.lock().records.len()).sum()
    }

    /// Current score and reputation of `id`, catching up missed epochs first.
    pub fn score(&self, id: &AccountId, now: u64) -> Result<(u64, f64, ReputationLevel), AsError> {
        let db = self.db.read();
        let epoch = self.current_epoch(&db, now)?;
        let mut account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        self.catch_up(id, &mut account, epoch)?;
        let sc = account.records[&epoch].sc;
        Ok((epoch, sc, reputation(sc, &self.config.thresholds)))
    }

    pub fn create_account<R: RngCore + CryptoRng>(
        &self,
        now: u64,
        rng: &mut R,
    ) -> Result<AccountId, AsError> {
        loop {
            let id = AccountId::random(rng);
            match self.register_sender(id, now) {
                Err(AsError::DuplicateAccount) => continue,
                other => return other.map(|_| id),
            }
        }
    }

    pub fn register_sender(&self, id: AccountId, now: u64) -> Result<SenderEpochRecord, AsError> {
        let mut db = self.db.write();
        let epoch = self.current_epoch(&db, now)?;
        if db.accounts.contains_key(&id) {
            return Err(AsError::DuplicateAccount);
        }
        let record = SenderEpochRecord::fresh(self.config.sc_init, BTreeMap::new());
        self.persist(Event::Record {
            id,
            epoch,
            record: record.clone(),
        })?;
        let mut account = Account::default();
        account.records.insert(epoch, record.clone());
        db.accounts.insert(id, Mutex::new(account));
        Ok(record)
    }

    /// Brings a dormant account forward to `epoch` using `x = 0` and `N = round(mu)` for
    /// every missed roll.
    fn catch_up(&self, id: &AccountId, account: &mut Account, epoch: u64) -> Result<(), AsError> {
        let (latest, record) = account.latest();
        if latest >= epoch {
            return Ok(());
        }
        let n = self.config.noise.catch_up_noise();
        let mut sc = record.sc;
        for _ in latest..epoch {
            sc = upd(sc, n, &self.config.score);
        }
        let horizon = epoch * self.config.epoch_dur;
        let vks = record
            .vks
            .iter()
            .filter(|(_, &exp)| exp > horizon)
            .map(|(c, &e)| (*c, e))
            .collect();
        let fresh = SenderEpochRecord::fresh(sc, vks);
        self.persist(Event::Record {
            id: *id,
            epoch,
            record: fresh.clone(),
        })?;
        account.records.insert(epoch, fresh);
        Ok(())
    }

    pub fn register_epoch_key(
        &self,
        id: &AccountId,
        epk: GroupElement,
        now: u64,
    ) -> Result<(), AsError> {
        let db = self.db.read();
        let epoch = self.current_epoch(&db, now)?;
        let mut account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        self.catch_up(id, &mut account, epoch)?;
        let record = account.records.get_mut(&epoch).expect("caught up");
        if record.epk.is_some() {
            return Err(AsError::EpochKeySet);
        }
        let mut updated = record.clone();
        updated.epk = Some(epk);
        self.persist(Event::Record {
            id: *id,
            epoch,
            record: updated.clone(),
        })?;
        *record = updated;
        Ok(())
    }

    pub fn issue_tag<R: RngCore + CryptoRng>(
        &self,
        id: &AccountId,
        com_s: Commitment,
        com_r: Commitment,
        now: u64,
        rng: &mut R,
    ) -> Result<EndorsementTag, AsError> {
        let db = self.db.read();
        let epoch = self.current_epoch(&db, now)?;
        let mut account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        self.catch_up(id, &mut account, epoch)?;
        let record = account.records.get_mut(&epoch).expect("caught up");
        let epk = record.epk.ok_or(AsError::NoEpochKey)?;
        let tau = now;
        let y_s = reputation(record.sc, &self.config.thresholds);

        let mut vks = record.vks.clone();
        vks.retain(|_, &mut exp| exp >= tau);
        if !vks.contains_key(&com_s) && vks.len() as i64 >= self.config.b_vk {
            return Err(AsError::KeyBudget);
        }
        vks.insert(com_s, tau + self.config.report_lock);
        self.persist(Event::Vks {
            id: *id,
            epoch,
            vks: vks.clone(),
        })?;
        record.vks = vks;
        drop(account);
        drop(db);

        let pp = self.config.group;
        let s = random_nonzero_scalar(rng);
        let g_prime = s * pp.generator;
        let x = s * epk;
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let (r, q) = pp_blind(&nonce, rng);
        let mut plaintext = [0u8; TAG_PLAINTEXT_LEN];
        plaintext[..ACCOUNT_ID_LEN].copy_from_slice(&id.0);
        plaintext[ACCOUNT_ID_LEN..ACCOUNT_ID_LEN + NONCE_LEN].copy_from_slice(&nonce);
        plaintext[ACCOUNT_ID_LEN + NONCE_LEN..].copy_from_slice(r.as_bytes());
        let ct: [u8; TAG_CIPHERTEXT_LEN] = self
            .sym
            .encrypt(&plaintext, rng)
            .try_into()
            .expect("fixed ciphertext length");
        let sigma = self.sig.sign(&signed_bytes(
            &com_s, &com_r, tau, y_s, &ct, &pp, &q, &g_prime, &x,
        ));
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

    pub fn handle_report(&self, report: &Report, now: u64) -> Result<ReportOutcome, AsError> {
        let tag = &report.tag;
        if now > self.config.report_deadline(tag.tau) {
            return Err(AsError::Expired);
        }
        if !verify(&self.public_key(), &tag.sigma, &tag.signed_bytes()) {
            return Err(AsError::BadSignature);
        }
        if !nizk_dleq_verify(&tag.g_prime, &tag.x, &tag.q, &report.r, &report.proof) {
            return Err(AsError::BadProof);
        }
        let plaintext = self
            .sym
            .decrypt(&tag.ct)
            .map_err(|_| AsError::BadCiphertext)?;
        if plaintext.len() != TAG_PLAINTEXT_LEN {
            return Err(AsError::BadCiphertext);
        }
        let id = AccountId(
            plaintext[..ACCOUNT_ID_LEN]
                .try_into()
                .expect("slice length"),
        );
        let nonce: [u8; NONCE_LEN] = plaintext[ACCOUNT_ID_LEN..ACCOUNT_ID_LEN + NONCE_LEN]
            .try_into()
            .expect("slice length");
        let r = decode_scalar(&plaintext[ACCOUNT_ID_LEN + NONCE_LEN..])
            .map_err(|_| AsError::BadCiphertext)?;
        let sigma = pp_unblind(&report.r, &r).map_err(|_| AsError::BadCiphertext)?;

        let epoch = self.config.epoch_of(tag.tau);
        let db = self.db.read();
        let mut account = db.accounts.get(&id).ok_or(AsError::UnknownAccount)?.lock();
        let record = account
            .records
            .get_mut(&epoch)
            .ok_or(AsError::UnknownEpoch(epoch))?;
        if record.tokens.contains_key(&nonce) {
            return Ok(ReportOutcome::Duplicate);
        }
        self.persist(Event::Token {
            id,
            epoch,
            token: SenderToken { nonce, sigma },
        })?;
        record.tokens.insert(nonce, sigma);
        Ok(ReportOutcome::Accepted)
    }

    /// Rolls epoch `i` with noise drawn from the configured backend.
    pub fn end_of_epoch<R: RngCore + CryptoRng>(
        &self,
        i: u64,
        rng: &mut R,
    ) -> Result<BTreeMap<AccountId, EpochOutcome>, AsError> {
        let sampler = NoiseSampler::new(&self.config.noise)?;
        self.roll(i, rng, &mut |_, rng| sampler.sample(rng))
    }

    /// Rolls epoch `i` with caller-chosen Gaussian-path noise per account.
    pub fn end_of_epoch_with_noise<R: RngCore + CryptoRng>(
        &self,
        i: u64,
        rng: &mut R,
        noise: &mut dyn FnMut(&AccountId) -> i64,
    ) -> Result<BTreeMap<AccountId, EpochOutcome>, AsError> {
        self.roll(i, rng, &mut |id, _| Ok(noise(id)))
    }

    fn roll<R: RngCore + CryptoRng>(
        &self,
        i: u64,
        rng: &mut R,
        noise: &mut dyn FnMut(&AccountId, &mut R) -> Result<i64, ParamError>,
    ) -> Result<BTreeMap<AccountId, EpochOutcome>, AsError> {
        let mut db = self.db.write();
        if let Some(r) = db.rolled {
            if i != r + 1 {
                return Err(AsError::RollOrder {
                    requested: i,
                    expected: r + 1,
                });
            }
        }
        let cfg = &self.config;
        let e = cfg.expiry;
        let token_epoch = i.checked_sub(e);
        let horizon = (i + 1) * cfg.epoch_dur;
        let mut outcomes = BTreeMap::new();
        let mut pending = Vec::new();

        for (id, account) in db.accounts.iter_mut() {
            let account = account.get_mut();
            let Some(record) = account.records.get(&i) else {
                continue;
            };
            let counted = token_epoch.and_then(|t| account.records.get(&t));
            let x = counted.map_or(0, |r| r.tokens.len()) as i64;
            let recent_key = (i.saturating_sub(e - 1)..=i)
                .any(|j| account.records.get(&j).is_some_and(|r| r.epk.is_some()));
            if x == 0 && !recent_key {
                // Dormant: caught up lazily on the next interaction.
                continue;
            }

            let dummies = counted.and_then(|r| r.dummies.as_deref());
            let (score_count, shown) =
                if let (NoiseBackend::Dummy, Some(dummies)) = (cfg.noise_backend, dummies) {
                    let mut shown: Vec<SenderToken> = counted
                        .into_iter()
                        .flat_map(|r| r.tokens.iter())
                        .map(|(n, s)| SenderToken {
                            nonce: *n,
                            sigma: *s,
                        })
                        .chain(dummies.iter().copied())
                        .collect();
                    shown.sort_by_key(|a| a.nonce);
                    (shown.len() as i64 - cfg.dummy_batch as i64, shown)
                } else {
                    let n = noise(id, rng)?;
                    let keep = (x + n).max(0) as usize;
                    let mut all: Vec<SenderToken> = counted
                        .into_iter()
                        .flat_map(|r| r.tokens.iter())
                        .map(|(n, s)| SenderToken {
                            nonce: *n,
                            sigma: *s,
                        })
                        .collect();
                    all.shuffle(rng);
                    all.truncate(keep);
                    all.sort_by_key(|a| a.nonce);
                    (x + n, all)
                };

            let new_sc = upd(record.sc, score_count, &cfg.score);
            let vks = record
                .vks
                .iter()
                .filter(|(_, &exp)| exp > horizon)
                .map(|(c, &e)| (*c, e))
                .collect();
            let next = SenderEpochRecord::fresh(new_sc, vks);
            let entry = ProofEntry {
                token_epoch,
                score_count,
                new_sc,
                shown,
            };
            outcomes.insert(
                *id,
                EpochOutcome {
                    new_sc,
                    noisy_count: entry.shown.len() as u64,
                },
            );
            pending.push((*id, next, entry));
        }

        for (id, next, entry) in pending {
            self.persist(Event::Record {
                id,
                epoch: i + 1,
                record: next.clone(),
            })?;
            self.persist(Event::Proof {
                id,
                epoch: i,
                entry: entry.clone(),
            })?;
            let account = db.accounts.get_mut(&id).expect("present").get_mut();
            account.records.insert(i + 1, next);
            account.proofs.insert(i, entry);
        }
        self.persist(Event::Rolled { epoch: i })?;
        db.rolled = Some(i);
        let gc = cfg.gc_horizon(i);
        for account in db.accounts.values_mut() {
            garbage_collect(account.get_mut(), gc);
        }
        Ok(outcomes)
    }

    /// Tokens shown for the roll of epoch `i`. The subset is fixed when the epoch is
    /// rolled, so repeated calls agree.
    pub fn proof_of_reports(&self, id: &AccountId, i: u64) -> Result<ProofOfReports, AsError> {
        let db = self.db.read();
        let account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        if let Some(entry) = account.proofs.get(&i) {
            return Ok(ProofOfReports {
                epoch: i,
                token_epoch: entry.token_epoch,
                tokens: entry.shown.clone(),
            });
        }
        let first = *account
            .records
            .keys()
            .next()
            .expect("accounts hold a record");
        match db.rolled {
            // Dormant through this roll: nothing was counted.
            Some(r) if i >= first && i <= r && i >= self.config.gc_horizon(r) => {
                Ok(ProofOfReports {
                    epoch: i,
                    token_epoch: i.checked_sub(self.config.expiry),
                    tokens: Vec::new(),
                })
            }
            _ => Err(AsError::UnknownEpoch(i)),
        }
    }

    /// Starts oblivious dummy generation for the tokens of `token_epoch`.
    pub fn dummy_start<R: RngCore + CryptoRng>(
        &self,
        id: &AccountId,
        token_epoch: u64,
        rng: &mut R,
    ) -> Result<(u64, DummyQueries), AsError> {
        let db = self.db.read();
        let mut account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        let record = account
            .records
            .get(&token_epoch)
            .ok_or(AsError::UnknownEpoch(token_epoch))?;
        let epk = record.epk.ok_or(AsError::NoEpochKey)?;
        if record.dummies.is_some() {
            return Err(AsError::DummySession);
        }
        if let Some(r) = db.rolled {
            if token_epoch + self.config.expiry <= r {
                return Err(AsError::UnknownEpoch(token_epoch));
            }
        }
        let (queries, secrets) =
            dummy::as_start(self.config.dummy_batch as usize, token_epoch, rng);
        let batch_id = {
            let mut next = self.batch_ids.lock();
            *next += 1;
            *next
        };
        account.dummy_sessions.insert(
            batch_id,
            DummySession {
                token_epoch,
                epk,
                queries: queries.clone(),
                secrets,
            },
        );
        Ok((batch_id, queries))
    }

    /// Verifies the sender's reply and stores the resulting dummies; returns their count.
    pub fn dummy_finish(
        &self,
        id: &AccountId,
        batch_id: u64,
        reply: &DummyReply,
    ) -> Result<usize, AsError> {
        let db = self.db.read();
        let mut account = db.accounts.get(id).ok_or(AsError::UnknownAccount)?.lock();
        let session = account
            .dummy_sessions
            .remove(&batch_id)
            .ok_or(AsError::DummySession)?;
        let tokens = dummy::as_finish(
            &self.config.group,
            &session.epk,
            &session.queries,
            &session.secrets,
            reply,
        )
        .map_err(|e| AsError::DummyReply(e.to_string()))?;
        let record = account
            .records
            .get_mut(&session.token_epoch)
            .ok_or(AsError::UnknownEpoch(session.token_epoch))?;
        if record.dummies.is_some() {
            return Err(AsError::DummySession);
        }
        self.persist(Event::Dummies {
            id: *id,
            epoch: session.token_epoch,
            tokens: tokens.clone(),
        })?;
        let count = tokens.len();
        record.dummies = Some(tokens);
        Ok(count)
    }
}

impl AsConfig {
    /// Records with an epoch below this are dropped when epoch `i` is rolled.
    fn gc_horizon(&self, i: u64) -> u64 {
        i.saturating_sub(self.expiry + 1)
    }
}

fn record_mut<'a>(
    db: &'a mut Db,
    id: &AccountId,
    epoch: u64,
) -> Result<&'a mut SenderEpochRecord, AsError> {
    db.accounts
        .get_mut(id)
        .and_then(|a| a.get_mut().records.get_mut(&epoch))
        .ok_or(AsError::Store(format!(
            "log references missing record {id}/{epoch}"
        )))
}

fn garbage_collect(account: &mut Account, horizon: u64) {
    let (latest, _) = account.latest();
    account.records.retain(|&e, _| e >= horizon || e == latest);
    account.proofs.retain(|&e, _| e >= horizon);
    account
        .dummy_sessions
        .retain(|_, s| s.token_epoch >= horizon);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{nizk_dleq_prove, pp_keygen, pp_verify};
    use crate::primitives::commit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        server: AccountabilityServer,
        channel_coms: BTreeMap<Vec<u8>, Commitment>,
    }

    fn fixture(config: AsConfig) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let server = AccountabilityServer::setup(config, &mut rng).unwrap();
        Fixture {
            rng,
            server,
            channel_coms: BTreeMap::new(),
        }
    }

    fn sender(f: &mut Fixture, now: u64) -> (AccountId, crate::group::Scalar) {
        let id = f.server.create_account(now, &mut f.rng).unwrap();
        let (esk, epk) = pp_keygen(&f.server.config().group, &mut f.rng);
        f.server.register_epoch_key(&id, epk, now).unwrap();
        (id, esk)
    }

    fn report_for(f: &mut Fixture, tag: &EndorsementTag, esk: &crate::group::Scalar) -> Report {
        let r = esk * tag.q;
        let proof = nizk_dleq_prove(&tag.g_prime, &tag.x, &tag.q, &r, esk, &mut f.rng);
        Report {
            tag: tag.clone(),
            proof,
            r,
        }
    }

    /// Issues a tag for channel key `vk`, reusing its commitment across calls.
    fn issue(
        f: &mut Fixture,
        id: &AccountId,
        vk: &[u8],
        now: u64,
    ) -> Result<EndorsementTag, AsError> {
        let com_s = match f.channel_coms.get(vk) {
            Some(c) => *c,
            None => {
                let (c, _) = commit(vk, &mut f.rng);
                f.channel_coms.insert(vk.to_vec(), c);
                c
            }
        };
        let (com_r, _) = commit(b"receiver", &mut f.rng);
        f.server.issue_tag(id, com_s, com_r, now, &mut f.rng)
    }

    #[test]
    fn config_validation() {
        let ok = AsConfig::default();
        assert!(ok.validate().is_ok());
        let mut c = ok.clone();
        c.expiry = 1;
        assert_eq!(c.validate(), Err(ParamError::Expiry(1)));
        let mut c = ok.clone();
        c.val_period = c.epoch_dur + 1;
        assert!(matches!(
            c.validate(),
            Err(ParamError::ValidityPeriod { .. })
        ));
        let mut c = ok.clone();
        c.report_lock = 2 * c.epoch_dur - 1;
        assert!(matches!(c.validate(), Err(ParamError::ReportLock { .. })));
        let mut c = ok.clone();
        c.b_vk = 3;
        assert!(matches!(
            c.validate(),
            Err(ParamError::SensitivityMismatch { .. })
        ));
        let mut c = ok;
        c.sc_init = 101.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn setup_and_registration() {
        let mut f = fixture(AsConfig::default());
        let other = AccountabilityServer::setup(AsConfig::default(), &mut f.rng).unwrap();
        assert_ne!(f.server.public_key(), other.public_key());
        assert_eq!(f.server.config().group, GroupParams::default());
        assert_eq!(f.server.account_count(), 0);

        let id = AccountId([7; 16]);
        let now = 3 * 3600 + 5;
        let rec = f.server.register_sender(id, now).unwrap();
        assert_eq!(rec.sc, 100.0);
        assert!(rec.epk.is_none());
        assert!(f.server.record(&id, 3).is_some());
        assert_eq!(
            f.server.register_sender(id, now),
            Err(AsError::DuplicateAccount)
        );

        let (_, epk) = pp_keygen(&GroupParams::default(), &mut f.rng);
        assert_eq!(
            f.server.register_epoch_key(&AccountId([8; 16]), epk, now),
            Err(AsError::UnknownAccount)
        );
        f.server.register_epoch_key(&id, epk, now).unwrap();
        assert_eq!(
            f.server.register_epoch_key(&id, epk, now),
            Err(AsError::EpochKeySet)
        );
        f.server.end_of_epoch(3, &mut f.rng).unwrap();
        f.server.register_epoch_key(&id, epk, 4 * 3600).unwrap();
    }

    #[test]
    fn key_budget() {
        let mut f = fixture(AsConfig::default());
        let now = 100;
        let (id, _) = sender(&mut f, now);
        issue(&mut f, &id, b"vk-1", now).unwrap();
        issue(&mut f, &id, b"vk-1", now + 1).unwrap();
        assert_eq!(
            issue(&mut f, &id, b"vk-2", now + 2),
            Err(AsError::KeyBudget)
        );

        let fresh = AccountId([1; 16]);
        f.server.register_sender(fresh, now).unwrap();
        assert_eq!(issue(&mut f, &fresh, b"vk", now), Err(AsError::NoEpochKey));
    }

    #[test]
    fn key_budget_frees_after_lock() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 0);
        issue(&mut f, &id, b"vk-1", 0).unwrap();
        f.server.end_of_epoch(0, &mut f.rng).unwrap();
        let epk = esk * GroupParams::default().generator;
        f.server.register_epoch_key(&id, epk, 3600).unwrap();
        assert_eq!(issue(&mut f, &id, b"vk-2", 3600), Err(AsError::KeyBudget));
        assert_eq!(issue(&mut f, &id, b"vk-2", 7199), Err(AsError::KeyBudget));
        // The roll of epoch 1 keeps only entries expiring after 7200.
        f.server.end_of_epoch(1, &mut f.rng).unwrap();
        assert!(f.server.record(&id, 2).unwrap().vks.is_empty());
        f.server.register_epoch_key(&id, epk, 7200).unwrap();
        assert!(issue(&mut f, &id, b"vk-2", 7200).is_ok());
    }

    #[test]
    fn issued_tag_is_well_formed() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 10);
        let tag = issue(&mut f, &id, b"vk", 10).unwrap();
        assert!(verify(
            &f.server.public_key(),
            &tag.sigma,
            &tag.signed_bytes()
        ));
        assert_eq!(tag.x, esk * tag.g_prime);
        assert_eq!(tag.y_s, ReputationLevel::VeryHigh);
        assert_eq!(tag.tau, 10);
    }

    #[test]
    fn report_pipeline() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 10);
        let tag = issue(&mut f, &id, b"vk", 10).unwrap();
        let report = report_for(&mut f, &tag, &esk);
        assert_eq!(
            f.server.handle_report(&report, 20).unwrap(),
            ReportOutcome::Accepted
        );
        let record = f.server.record(&id, 0).unwrap();
        assert_eq!(record.tokens.len(), 1);
        let (nonce, sigma) = record.tokens.iter().next().unwrap();
        assert!(pp_verify(nonce, sigma, &esk));
        assert_eq!(
            f.server.handle_report(&report, 30).unwrap(),
            ReportOutcome::Duplicate
        );
        assert_eq!(f.server.record(&id, 0).unwrap().tokens.len(), 1);

        let tag = issue(&mut f, &id, b"vk", 40).unwrap();
        let report = report_for(&mut f, &tag, &esk);
        let deadline = 40 + 2 * 3600;
        assert_eq!(
            f.server.handle_report(&report, deadline + 1),
            Err(AsError::Expired)
        );
        assert!(f.server.handle_report(&report, deadline).is_ok());
    }

    #[test]
    fn report_rejections() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 10);
        let tag = issue(&mut f, &id, b"vk", 10).unwrap();
        let good = report_for(&mut f, &tag, &esk);

        let mut bad_sig = good.clone();
        bad_sig.tag.tau += 1;
        assert_eq!(
            f.server.handle_report(&bad_sig, 20),
            Err(AsError::BadSignature)
        );

        let mut bad_r = good.clone();
        bad_r.r += GroupParams::default().generator;
        assert_eq!(f.server.handle_report(&bad_r, 20), Err(AsError::BadProof));

        // A correctly signed tag carrying a ciphertext under another key.
        let other = AccountabilityServer::from_keys(
            AsConfig::default(),
            SymKey::generate(&mut f.rng),
            SigKeypair::from_secret_bytes(&f.server.sig.secret_bytes()),
        );
        other.register_sender(id, 10).unwrap();
        other
            .register_epoch_key(&id, esk * GroupParams::default().generator, 10)
            .unwrap();
        let (com_s, _) = commit(b"vk", &mut f.rng);
        let foreign = other.issue_tag(&id, com_s, com_s, 10, &mut f.rng).unwrap();
        let report = report_for(&mut f, &foreign, &esk);
        assert_eq!(
            f.server.handle_report(&report, 20),
            Err(AsError::BadCiphertext)
        );
    }

    #[test]
    fn end_of_epoch_scores_and_proofs() {
        let config = AsConfig {
            score: ScoreParams::new(1, 100, 0.5).unwrap(),
            sc_init: 10.0,
            ..AsConfig::default()
        };
        let mut f = fixture(config);
        let (id, esk) = sender(&mut f, 0);
        for t in 0..3 {
            let tag = issue(&mut f, &id, b"vk", t).unwrap();
            let rep = report_for(&mut f, &tag, &esk);
            f.server.handle_report(&rep, 100).unwrap();
        }
        let mut noise = |_: &AccountId| -2;
        f.server
            .end_of_epoch_with_noise(0, &mut f.rng, &mut noise)
            .unwrap();
        f.server
            .end_of_epoch_with_noise(1, &mut f.rng, &mut noise)
            .unwrap();
        let out = f
            .server
            .end_of_epoch_with_noise(2, &mut f.rng, &mut noise)
            .unwrap();
        // x = 3, N = -2, k = 1: upd(sc, 1) = sc.
        assert_eq!(out[&id].noisy_count, 1);
        let proof = f.server.proof_of_reports(&id, 2).unwrap();
        assert_eq!(proof.token_epoch, Some(0));
        assert_eq!(proof.tokens.len(), 1);
        assert!(pp_verify(
            &proof.tokens[0].nonce,
            &proof.tokens[0].sigma,
            &esk
        ));
        assert_eq!(f.server.proof_of_reports(&id, 2).unwrap(), proof);
        // Epochs 0 and 1 count nothing and recover by b each; epoch 2 holds at 11.
        assert_eq!(out[&id].new_sc, 11.0);
        assert_eq!(f.server.proof_of_reports(&id, 0).unwrap().tokens.len(), 0);
        assert_eq!(f.server.active_epoch(), Some(3));
    }

    #[test]
    fn proof_subset() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 0);
        let mut nonces = Vec::new();
        for t in 0..5u64 {
            let tag = issue(&mut f, &id, b"vk", t).unwrap();
            let rep = report_for(&mut f, &tag, &esk);
            f.server.handle_report(&rep, 10).unwrap();
        }
        for n in f.server.record(&id, 0).unwrap().tokens.keys() {
            nonces.push(*n);
        }
        let mut noise = |_: &AccountId| -2;
        for i in 0..3 {
            f.server
                .end_of_epoch_with_noise(i, &mut f.rng, &mut noise)
                .unwrap();
        }
        let proof = f.server.proof_of_reports(&id, 2).unwrap();
        assert_eq!(proof.tokens.len(), 3);
        for t in &proof.tokens {
            assert!(nonces.contains(&t.nonce));
            assert!(pp_verify(&t.nonce, &t.sigma, &esk));
        }
        assert!(f.server.proof_of_reports(&id, 7).is_err());
        assert!(f.server.proof_of_reports(&AccountId([0; 16]), 2).is_err());
    }

    #[test]
    fn no_reports_recovers_and_hides_all() {
        let mut f = fixture(AsConfig {
            sc_init: 50.0,
            ..AsConfig::default()
        });
        let (id, _) = sender(&mut f, 0);
        issue(&mut f, &id, b"vk", 0).unwrap();
        let out = f.server.end_of_epoch(0, &mut f.rng).unwrap();
        assert_eq!(
            out[&id],
            EpochOutcome {
                new_sc: 50.5,
                noisy_count: 0
            }
        );
    }

    #[test]
    fn vks_carried_over_while_unexpired() {
        let mut f = fixture(AsConfig::default());
        let (id, _) = sender(&mut f, 0);
        issue(&mut f, &id, b"vk", 5).unwrap();
        f.server.end_of_epoch(0, &mut f.rng).unwrap();
        assert_eq!(f.server.record(&id, 1).unwrap().vks.len(), 1);
        f.server.end_of_epoch(1, &mut f.rng).unwrap();
        // Expiry 5 + 7200 lies beyond the end of epoch 1 (7200).
        assert_eq!(f.server.record(&id, 2).unwrap().vks.len(), 1);
    }

    #[test]
    fn dormant_sender_catches_up_with_mean_noise() {
        let mut f = fixture(AsConfig {
            sc_init: 20.0,
            ..AsConfig::default()
        });
        let id = f.server.create_account(0, &mut f.rng).unwrap();
        for i in 0..4 {
            assert!(f.server.end_of_epoch(i, &mut f.rng).unwrap().is_empty());
        }
        // Four missed rolls with x = 0 and N = -8: each recovers by b.
        let (epoch, sc, _) = f.server.score(&id, 4 * 3600).unwrap();
        assert_eq!((epoch, sc), (4, 22.0));
        assert_eq!(f.server.proof_of_reports(&id, 2).unwrap().tokens.len(), 0);
    }

    #[test]
    fn epoch_clock_guards() {
        let mut f = fixture(AsConfig::default());
        f.server.end_of_epoch(0, &mut f.rng).unwrap();
        assert!(matches!(
            f.server.register_sender(AccountId([1; 16]), 2 * 3600),
            Err(AsError::RolloverPending { pending: 1, .. })
        ));
        assert!(matches!(
            f.server.register_sender(AccountId([1; 16]), 10),
            Err(AsError::ClockBehind { .. })
        ));
        assert!(matches!(
            f.server.end_of_epoch(3, &mut f.rng),
            Err(AsError::RollOrder { .. })
        ));
    }

    #[test]
    fn unreported_tags_store_nothing() {
        let mut f = fixture(AsConfig::default());
        let (id, _) = sender(&mut f, 0);
        let (com_s, _) = commit(b"vk", &mut f.rng);
        for t in 0..10_000u64 {
            let (com_r, _) = commit(b"r", &mut f.rng);
            f.server
                .issue_tag(&id, com_s, com_r, t % 3600, &mut f.rng)
                .unwrap();
        }
        assert_eq!(f.server.stored_token_count(), 0);
        assert_eq!(f.server.record(&id, 0).unwrap().vks.len(), 1);
    }

    #[test]
    fn garbage_collection_bounds_records() {
        let mut f = fixture(AsConfig::default());
        let (id, esk) = sender(&mut f, 0);
        let epk = esk * GroupParams::default().generator;
        for i in 0..10u64 {
            if i > 0 {
                f.server.register_epoch_key(&id, epk, i * 3600).unwrap();
            }
            f.server.end_of_epoch(i, &mut f.rng).unwrap();
        }
        // Epochs 7..=10 survive the roll of epoch 9 (horizon 9 - E - 1 = 6 is exclusive).
        assert!(f.server.stored_record_count() <= 5);
        assert!(f.server.record(&id, 10).is_some());
        assert!(f.server.record(&id, 5).is_none());
    }
}
