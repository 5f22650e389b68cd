//! AS operations addressed by route, independent of the transport.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use sandi_core::server::{AccountabilityServer, AsConfig, AsError};
use sandi_core::wire::{
    msg_type, Message, ProofMessage, RollSummary, ScoreInfo, Status, StatusCode,
};

use crate::config::{ClockMode, ConfigError, ServiceConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Route {
    Register,
    EpochKey,
    Tag,
    Report,
    Proof,
    Score,
    DummyStart,
    DummyFinish,
    Params,
    EpochRoll,
    Clock,
}

impl Route {
    pub const ALL: [Route; 11] = [
        Route::Register,
        Route::EpochKey,
        Route::Tag,
        Route::Report,
        Route::Proof,
        Route::Score,
        Route::DummyStart,
        Route::DummyFinish,
        Route::Params,
        Route::EpochRoll,
        Route::Clock,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Route::Register => "/v1/register",
            Route::EpochKey => "/v1/epoch-key",
            Route::Tag => "/v1/tag",
            Route::Report => "/v1/report",
            Route::Proof => "/v1/proof",
            Route::Score => "/v1/score",
            Route::DummyStart => "/v1/dummy/start",
            Route::DummyFinish => "/v1/dummy/finish",
            Route::Params => "/v1/params",
            Route::EpochRoll => "/v1/admin/epoch-roll",
            Route::Clock => "/v1/admin/clock",
        }
    }

    pub fn is_get(self) -> bool {
        self == Route::Params
    }

    /// Message type the request body must carry; `None` for routes without a body.
    pub fn request_type(self) -> Option<u8> {
        match self {
            Route::Register | Route::Params => None,
            Route::EpochKey => Some(msg_type::EPOCH_KEY),
            Route::Tag => Some(msg_type::TAG_REQUEST),
            Route::Report => Some(msg_type::REPORT),
            Route::Proof => Some(msg_type::PROOF_REQUEST),
            Route::Score => Some(msg_type::SCORE_QUERY),
            Route::DummyStart => Some(msg_type::DUMMY_START),
            Route::DummyFinish => Some(msg_type::DUMMY_REPLY),
            Route::EpochRoll => Some(msg_type::EPOCH_ROLL),
            Route::Clock => Some(msg_type::CLOCK_SET),
        }
    }
}

pub fn status_code(err: &AsError) -> StatusCode {
    match err {
        AsError::UnknownAccount => StatusCode::UnknownAccount,
        AsError::DuplicateAccount => StatusCode::DuplicateAccount,
        AsError::EpochKeySet => StatusCode::EpochKeySet,
        AsError::NoEpochKey => StatusCode::NoEpochKey,
        AsError::KeyBudget => StatusCode::KeyBudget,
        AsError::Expired => StatusCode::Expired,
        AsError::BadSignature => StatusCode::BadSignature,
        AsError::BadProof => StatusCode::BadProof,
        AsError::BadCiphertext => StatusCode::BadCiphertext,
        AsError::UnknownEpoch(_) => StatusCode::UnknownEpoch,
        AsError::RolloverPending { .. } => StatusCode::RolloverPending,
        AsError::ClockBehind { .. } => StatusCode::ClockBehind,
        AsError::RollOrder { .. } => StatusCode::RollOrder,
        AsError::DummySession => StatusCode::DummySession,
        AsError::DummyReply(_) => StatusCode::Malformed,
        AsError::Param(_) | AsError::Store(_) => StatusCode::Internal,
    }
}

fn rejected(err: AsError) -> Status {
    Status::error(status_code(&err), err.to_string())
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    As(#[from] AsError),
}

enum Clock {
    System,
    Manual(AtomicU64),
}

pub struct Service {
    server: AccountabilityServer,
    rng: Mutex<ChaCha20Rng>,
    clock: Clock,
}

impl Service {
    /// A service with fresh keys. `seed` makes every random choice reproducible.
    pub fn new(config: AsConfig, clock: ClockMode, seed: Option<u64>) -> Result<Self, AsError> {
        let mut rng = seeded(seed);
        let server = AccountabilityServer::setup(config, &mut rng)?;
        Ok(Self::with_server(server, clock, rng))
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let as_config = config.settings.to_as_config()?;
        let mut rng = seeded(config.seed);
        let server = match &config.persistence {
            Some(path) => AccountabilityServer::open(as_config, path, &mut rng)?,
            None => AccountabilityServer::setup(as_config, &mut rng)?,
        };
        Ok(Self::with_server(server, config.clock, rng))
    }

    fn with_server(server: AccountabilityServer, clock: ClockMode, rng: ChaCha20Rng) -> Self {
        Service {
            server,
            rng: Mutex::new(rng),
            clock: match clock {
                ClockMode::System => Clock::System,
                ClockMode::Manual => Clock::Manual(AtomicU64::new(0)),
            },
        }
    }

    pub fn server(&self) -> &AccountabilityServer {
        &self.server
    }

    pub fn now(&self) -> u64 {
        match &self.clock {
            Clock::System => SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            Clock::Manual(t) => t.load(Ordering::SeqCst),
        }
    }

    /// A generator for one request, split off the shared stream so that slow
    /// operations do not hold the lock.
    fn request_rng(&self) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        self.rng.lock().fill_bytes(&mut seed);
        ChaCha20Rng::from_seed(seed)
    }

    pub fn handle(&self, route: Route, body: &[u8]) -> Status {
        let request = match route.request_type() {
            Some(expected) => match Message::decode_expect(body, expected) {
                Ok(m) => Some(m),
                Err(e) => return Status::error(StatusCode::Malformed, e.to_string()),
            },
            None if body.is_empty() => None,
            None => return Status::error(StatusCode::Malformed, "this route takes no body"),
        };
        let now = self.now();
        let mut rng = self.request_rng();
        let server = &self.server;
        let result = match (route, request) {
            (Route::Register, None) => server
                .create_account(now, &mut rng)
                .map(|id| Status::ok_with(&Message::Register { id })),
            (Route::Params, None) => {
                Ok(Status::ok_with(&Message::Params(server.public_params(now))))
            }
            (Route::EpochKey, Some(Message::EpochKey { id, epk })) => server
                .register_epoch_key(&id, epk, now)
                .map(|()| Status::ok()),
            (Route::Tag, Some(Message::TagRequest { id, com_s, com_r })) => server
                .issue_tag(&id, com_s, com_r, now, &mut rng)
                .map(|tag| Status::ok_with(&Message::Tag(tag))),
            // Duplicates are acknowledged like fresh reports.
            (Route::Report, Some(Message::Report(report))) => {
                server.handle_report(&report, now).map(|_| Status::ok())
            }
            (Route::Proof, Some(Message::ProofRequest { id, epoch })) => {
                server.proof_of_reports(&id, epoch).map(|p| {
                    Status::ok_with(&Message::Proof(ProofMessage {
                        epoch: p.epoch,
                        token_epoch: p.token_epoch,
                        tokens: p.tokens,
                    }))
                })
            }
            (Route::Score, Some(Message::ScoreQuery { id })) => {
                server.score(&id, now).map(|(epoch, sc, level)| {
                    Status::ok_with(&Message::ScoreInfo(ScoreInfo { epoch, sc, level }))
                })
            }
            (Route::DummyStart, Some(Message::DummyStart { id, token_epoch })) => server
                .dummy_start(&id, token_epoch, &mut rng)
                .map(|(batch_id, queries)| {
                    Status::ok_with(&Message::DummyQueries { batch_id, queries })
                }),
            (
                Route::DummyFinish,
                Some(Message::DummyReply {
                    id,
                    batch_id,
                    reply,
                }),
            ) => server
                .dummy_finish(&id, batch_id, &reply)
                .map(|_| Status::ok()),
            (Route::EpochRoll, Some(Message::EpochRoll { epoch })) => self.roll(epoch, &mut rng),
            (Route::Clock, Some(Message::ClockSet { now })) => return self.set_clock(now),
            _ => unreachable!("request type checked above"),
        };
        result.unwrap_or_else(rejected)
    }

    fn roll(&self, epoch: u64, rng: &mut ChaCha20Rng) -> Result<Status, AsError> {
        let outcomes = self.server.end_of_epoch(epoch, rng)?;
        let summary = RollSummary {
            epoch,
            outcomes: outcomes
                .into_iter()
                .map(|(id, o)| (id, o.new_sc, o.noisy_count))
                .collect(),
        };
        Ok(Status::ok_with(&Message::RollSummary(summary)))
    }

    fn set_clock(&self, now: u64) -> Status {
        match &self.clock {
            Clock::Manual(t) => {
                t.store(now, Ordering::SeqCst);
                Status::ok()
            }
            Clock::System => Status::error(
                StatusCode::Unsupported,
                "the service follows the system clock",
            ),
        }
    }

    /// Rolls every epoch that has ended, starting from `first` if nothing was rolled
    /// yet. Returns the epochs rolled.
    pub fn roll_due(&self, first: u64) -> Result<Vec<u64>, AsError> {
        let current = self.server.config().epoch_of(self.now());
        let mut next = self.server.active_epoch().unwrap_or(first);
        let mut rolled = Vec::new();
        while next < current {
            let mut rng = self.request_rng();
            self.server.end_of_epoch(next, &mut rng)?;
            rolled.push(next);
            next += 1;
        }
        Ok(rolled)
    }
}

fn seeded(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_entropy(),
    }
}
