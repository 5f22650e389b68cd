//! Typed client over any transport.

use std::sync::Arc;

use thiserror::Error;

use sandi_core::dummy::{DummyQueries, DummyReply};
use sandi_core::error::WireError;
use sandi_core::group::GroupElement;
use sandi_core::primitives::Commitment;
use sandi_core::server::PublicParams;
use sandi_core::tag::{AccountId, EndorsementTag, Report};
use sandi_core::wire::{
    msg_type, Message, ProofMessage, RollSummary, ScoreInfo, Status, StatusCode,
};

use crate::http::CONTENT_TYPE;
use crate::service::{Route, Service};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("undecodable reply: {0}")]
    Wire(#[from] WireError),
    #[error("{}: {}", .0.code.label(), .0.reason)]
    Rejected(Status),
    #[error("unexpected reply of type {0:#04x}")]
    Unexpected(u8),
}

impl ClientError {
    /// The service's status code, if the request reached it and was refused.
    pub fn code(&self) -> Option<StatusCode> {
        match self {
            ClientError::Rejected(s) => Some(s.code),
            _ => None,
        }
    }
}

/// Sends one request body and returns the encoded status reply.
pub trait Transport {
    fn call(&self, route: Route, body: Vec<u8>) -> Result<Vec<u8>, ClientError>;
}

impl Transport for Service {
    fn call(&self, route: Route, body: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        Ok(Message::Status(self.handle(route, &body)).encode())
    }
}

impl<T: Transport + ?Sized> Transport for Arc<T> {
    fn call(&self, route: Route, body: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        (**self).call(route, body)
    }
}

impl<T: Transport + ?Sized> Transport for &T {
    fn call(&self, route: Route, body: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        (**self).call(route, body)
    }
}

pub struct HttpTransport {
    base: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    /// `base` is the service origin, e.g. `http://127.0.0.1:7878`.
    pub fn new(base: impl Into<String>) -> Self {
        HttpTransport {
            base: base.into().trim_end_matches('/').to_owned(),
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Transport for HttpTransport {
    fn call(&self, route: Route, body: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}{}", self.base, route.path());
        let request = if route.is_get() {
            self.client.get(url)
        } else {
            self.client
                .post(url)
                .header(reqwest::header::CONTENT_TYPE, CONTENT_TYPE)
                .body(body)
        };
        let response = request
            .send()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let bytes = response
            .bytes()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(bytes.to_vec())
    }
}

pub struct Client<T> {
    transport: T,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T) -> Self {
        Client { transport }
    }

    fn request(&self, route: Route, body: Option<Message>) -> Result<Option<Message>, ClientError> {
        let body = body.map_or_else(Vec::new, |m| m.encode());
        let reply = self.transport.call(route, body)?;
        let Message::Status(status) = Message::decode_expect(&reply, msg_type::STATUS)? else {
            unreachable!("decode_expect checked the type");
        };
        if status.code != StatusCode::Ok {
            return Err(ClientError::Rejected(status));
        }
        if status.payload.is_empty() {
            return Ok(None);
        }
        Ok(Some(Message::decode(&status.payload)?))
    }

    fn expect_empty(&self, route: Route, body: Message) -> Result<(), ClientError> {
        match self.request(route, Some(body))? {
            None => Ok(()),
            Some(m) => Err(ClientError::Unexpected(m.msg_type())),
        }
    }

    pub fn params(&self) -> Result<PublicParams, ClientError> {
        match self.request(Route::Params, None)? {
            Some(Message::Params(p)) => Ok(p),
            other => Err(unexpected(other)),
        }
    }

    pub fn register(&self) -> Result<AccountId, ClientError> {
        match self.request(Route::Register, None)? {
            Some(Message::Register { id }) => Ok(id),
            other => Err(unexpected(other)),
        }
    }

    pub fn register_epoch_key(&self, id: AccountId, epk: GroupElement) -> Result<(), ClientError> {
        self.expect_empty(Route::EpochKey, Message::EpochKey { id, epk })
    }

    pub fn request_tag(
        &self,
        id: AccountId,
        com_s: Commitment,
        com_r: Commitment,
    ) -> Result<EndorsementTag, ClientError> {
        match self.request(Route::Tag, Some(Message::TagRequest { id, com_s, com_r }))? {
            Some(Message::Tag(tag)) => Ok(tag),
            other => Err(unexpected(other)),
        }
    }

    pub fn report(&self, report: &Report) -> Result<(), ClientError> {
        self.expect_empty(Route::Report, Message::Report(report.clone()))
    }

    pub fn proof(&self, id: AccountId, epoch: u64) -> Result<ProofMessage, ClientError> {
        match self.request(Route::Proof, Some(Message::ProofRequest { id, epoch }))? {
            Some(Message::Proof(p)) => Ok(p),
            other => Err(unexpected(other)),
        }
    }

    pub fn score(&self, id: AccountId) -> Result<ScoreInfo, ClientError> {
        match self.request(Route::Score, Some(Message::ScoreQuery { id }))? {
            Some(Message::ScoreInfo(s)) => Ok(s),
            other => Err(unexpected(other)),
        }
    }

    pub fn roll(&self, epoch: u64) -> Result<RollSummary, ClientError> {
        match self.request(Route::EpochRoll, Some(Message::EpochRoll { epoch }))? {
            Some(Message::RollSummary(s)) => Ok(s),
            other => Err(unexpected(other)),
        }
    }

    pub fn set_clock(&self, now: u64) -> Result<(), ClientError> {
        self.expect_empty(Route::Clock, Message::ClockSet { now })
    }

    pub fn dummy_start(
        &self,
        id: AccountId,
        token_epoch: u64,
    ) -> Result<(u64, DummyQueries), ClientError> {
        match self.request(
            Route::DummyStart,
            Some(Message::DummyStart { id, token_epoch }),
        )? {
            Some(Message::DummyQueries { batch_id, queries }) => Ok((batch_id, queries)),
            other => Err(unexpected(other)),
        }
    }

    pub fn dummy_finish(
        &self,
        id: AccountId,
        batch_id: u64,
        reply: DummyReply,
    ) -> Result<(), ClientError> {
        self.expect_empty(
            Route::DummyFinish,
            Message::DummyReply {
                id,
                batch_id,
                reply,
            },
        )
    }
}

fn unexpected(reply: Option<Message>) -> ClientError {
    ClientError::Unexpected(reply.map_or(0, |m| m.msg_type()))
}
