//! Accountability server, protocol clients and supporting cryptography for the Sandi
//! endorsement-tag reputation system.

pub mod dummy;
pub mod error;
pub mod group;
pub mod noise;
pub mod primitives;
pub mod receiver;
pub mod score;
pub mod sender;
pub mod server;
pub mod store;
pub mod tag;
pub mod wire;
