//! Network service, client, scripted runs and benchmarks for the anonymous
//! accountability protocol.

pub mod bench;
pub mod client;
pub mod config;
pub mod harness;
pub mod http;
pub mod service;

pub use client::{Client, ClientError, HttpTransport, Transport};
pub use config::{AsSettings, ClockMode, ServiceConfig};
pub use harness::{run_embedded, RunResult, RunSpec};
pub use service::{Route, Service};
