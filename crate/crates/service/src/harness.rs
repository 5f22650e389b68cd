//! Scripted multi-party runs against an AS.
//!
//! A run spec names the parties and lists timed actions:
//!
//! ```toml
//! senders = ["alice"]
//! receivers = ["bob"]
//! epochs = 1
//!
//! [config]          # AS settings for an embedded run, same keys as the service config
//! B_vk = 1
//!
//! [[action]]
//! epoch = 0
//! at = 60           # seconds into the epoch
//! op = "send"       # send | report | hold | replay | dummies | new-key
//! sender = "alice"
//! receiver = "bob"
//! delay = 0         # send: seconds between issuance and delivery
//! key = "main"      # channel key label
//! expect = "ok"     # optional outcome label to check
//! ```
//!
//! Every sender registers an epoch key at the start of each scripted epoch. After the
//! scripted epochs the run keeps rolling for `E` more epochs, so that every report is
//! counted, and each sender checks every proof it is shown.
//!
//! `hold` takes a report from the receiver without submitting it and `replay` submits
//! the last report taken for that channel, so a held report can be sent late.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use sandi_core::receiver::{ReceiverConfig, ReceiverError, ReceiverState};
use sandi_core::sender::{verify_report_proof, SenderError, SenderState};
use sandi_core::tag::{AccountId, FullEndorsementTag, Report};

use crate::client::{Client, ClientError, Transport};
use crate::config::{AsSettings, ClockMode, ConfigError};
use crate::service::Service;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub senders: Vec<String>,
    pub receivers: Vec<String>,
    pub epochs: u64,
    #[serde(default)]
    pub config: AsSettings,
    #[serde(default, rename = "action")]
    pub actions: Vec<Action>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Op {
    Send,
    Report,
    Hold,
    Replay,
    Dummies,
    NewKey,
}

impl Op {
    fn label(self) -> &'static str {
        match self {
            Op::Send => "send",
            Op::Report => "report",
            Op::Hold => "hold",
            Op::Replay => "replay",
            Op::Dummies => "dummies",
            Op::NewKey => "new-key",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Action {
    pub epoch: u64,
    #[serde(default)]
    pub at: u64,
    pub op: Op,
    pub sender: String,
    #[serde(default)]
    pub receiver: Option<String>,
    #[serde(default)]
    pub key: Option<String>,
    #[serde(default)]
    pub delay: u64,
    #[serde(default)]
    pub expect: Option<String>,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("run spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Service {
        context: String,
        source: ClientError,
    },
}

impl RunSpec {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let spec: RunSpec = toml::from_str(text).map_err(|e| HarnessError::Spec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Spec(msg));
        let epoch_dur = self.config.epoch_dur;
        for (i, a) in self.actions.iter().enumerate() {
            if !self.senders.contains(&a.sender) {
                return bad(format!("action {i}: unknown sender {:?}", a.sender));
            }
            if a.epoch >= self.epochs || a.at >= epoch_dur {
                return bad(format!("action {i}: time outside the scripted epochs"));
            }
            let needs_receiver = matches!(a.op, Op::Send | Op::Report | Op::Hold | Op::Replay);
            match &a.receiver {
                Some(r) if !self.receivers.contains(r) => {
                    return bad(format!("action {i}: unknown receiver {r:?}"))
                }
                None if needs_receiver => {
                    return bad(format!("action {i}: {} needs a receiver", a.op.label()))
                }
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SenderSummary {
    pub name: String,
    pub id: String,
    pub sc: f64,
    pub level: String,
    pub noisy_counts: Vec<u64>,
    /// One entry per proof checked, in roll order.
    pub verdicts: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub events: Vec<Value>,
    pub senders: Vec<SenderSummary>,
    pub mismatches: Vec<String>,
}

impl RunResult {
    /// One JSON object per line.
    pub fn transcript(&self) -> String {
        self.events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn all_accepted(&self) -> bool {
        self.senders.iter().all(|s| s.verdicts.iter().all(|&v| v))
    }

    pub fn success(&self) -> bool {
        self.mismatches.is_empty() && self.all_accepted()
    }
}

struct Sender {
    name: String,
    state: SenderState,
    keys: BTreeMap<String, [u8; 32]>,
    noisy_counts: Vec<u64>,
    verdicts: Vec<bool>,
}

struct Run<'a, T> {
    client: &'a Client<T>,
    observer: &'a mut dyn FnMut(&Value),
    rng: ChaCha20Rng,
    senders: Vec<Sender>,
    receivers: BTreeMap<String, ReceiverState>,
    /// Last report per (receiver, sender, key).
    reports: BTreeMap<(String, String, String), Report>,
    events: Vec<Value>,
    mismatches: Vec<String>,
}

fn sender_label(e: &SenderError) -> String {
    let kind = match e {
        SenderError::UnknownChannel => "unknown-channel",
        SenderError::NoPendingRequest => "no-pending-request",
        SenderError::Stale { .. } => "stale",
        SenderError::BadSignature => "bad-signature",
        SenderError::WrongEpochKey => "wrong-epoch-key",
        SenderError::GroupMismatch => "group-mismatch",
        SenderError::NoEpochKey(_) => "no-epoch-key",
        SenderError::Dummy(_) => "dummy",
    };
    format!("sender-{kind}")
}

fn receiver_label(e: &ReceiverError) -> String {
    let kind = match e {
        ReceiverError::Stale { .. } => "stale",
        ReceiverError::SenderCommitment => "sender-commitment",
        ReceiverError::ReceiverCommitment => "receiver-commitment",
        ReceiverError::BadSenderKey => "bad-sender-key",
        ReceiverError::BadSignature => "bad-signature",
        ReceiverError::BadProof => "bad-proof",
        ReceiverError::GroupMismatch => "group-mismatch",
        ReceiverError::UnknownChannel => "unknown-channel",
        ReceiverError::Locked { .. } => "locked",
        ReceiverError::NoTag => "no-tag",
    };
    format!("receiver-{kind}")
}

/// Outcome label of an operation that failed somewhere along the way.
enum Failure {
    Sender(SenderError),
    Receiver(ReceiverError),
    Service(ClientError),
}

impl Failure {
    fn label(&self) -> String {
        match self {
            Failure::Sender(e) => sender_label(e),
            Failure::Receiver(e) => receiver_label(e),
            Failure::Service(e) => e
                .code()
                .map_or_else(|| "transport".to_owned(), |c| c.label().to_owned()),
        }
    }
}

impl<T: Transport> Run<'_, T> {
    fn service<V>(
        &self,
        context: impl Into<String>,
        r: Result<V, ClientError>,
    ) -> Result<V, HarnessError> {
        r.map_err(|source| HarnessError::Service {
            context: context.into(),
            source,
        })
    }

    fn set_clock(&self, now: u64) -> Result<(), HarnessError> {
        self.service(
            format!("setting the clock to {now}"),
            self.client.set_clock(now),
        )
    }

    fn sender_index(&self, name: &str) -> usize {
        self.senders
            .iter()
            .position(|s| s.name == name)
            .expect("validated")
    }

    fn perform(&mut self, action: &Action, epoch: u64, now: u64) -> Result<(), Failure> {
        let si = self.sender_index(&action.sender);
        let key_label = action.key.clone().unwrap_or_else(|| "main".into());
        let client = self.client;
        match action.op {
            Op::NewKey => {
                let sender = &mut self.senders[si];
                let vk = sender
                    .state
                    .new_channel_key(sender.name.as_bytes(), &mut self.rng);
                sender.keys.insert(key_label, vk);
                Ok(())
            }
            Op::Send => {
                let receiver_name = action.receiver.clone().expect("validated");
                let sender = &mut self.senders[si];
                let vk = *sender.keys.entry(key_label).or_insert_with(|| {
                    sender
                        .state
                        .new_channel_key(sender.name.as_bytes(), &mut self.rng)
                });
                let receiver = self.receivers.get_mut(&receiver_name).expect("validated");
                let (com_s, com_r) = sender
                    .state
                    .begin_tag_request(&vk, receiver.address(), now, &mut self.rng)
                    .map_err(Failure::Sender)?;
                let tag = client
                    .request_tag(sender.state.id(), com_s, com_r)
                    .map_err(Failure::Service)?;
                let full: FullEndorsementTag = sender
                    .state
                    .complete_tag(tag, now, &mut self.rng)
                    .map_err(Failure::Sender)?;
                receiver
                    .receive_tag(&full, now + action.delay)
                    .map_err(Failure::Receiver)
            }
            Op::Report | Op::Hold | Op::Replay => {
                let receiver_name = action.receiver.clone().expect("validated");
                let slot = (
                    receiver_name.clone(),
                    action.sender.clone(),
                    key_label.clone(),
                );
                let report = if action.op != Op::Replay {
                    let vk = self.senders[si]
                        .keys
                        .get(&key_label)
                        .copied()
                        .ok_or(Failure::Receiver(ReceiverError::UnknownChannel))?;
                    let receiver = self.receivers.get_mut(&receiver_name).expect("validated");
                    let report = receiver.report(&vk, now).map_err(Failure::Receiver)?;
                    self.reports.insert(slot, report.clone());
                    if action.op == Op::Hold {
                        return Ok(());
                    }
                    report
                } else {
                    self.reports
                        .get(&slot)
                        .cloned()
                        .ok_or(Failure::Receiver(ReceiverError::NoTag))?
                };
                client.report(&report).map_err(Failure::Service)
            }
            Op::Dummies => {
                let id = self.senders[si].state.id();
                let (batch_id, queries) =
                    client.dummy_start(id, epoch).map_err(Failure::Service)?;
                let reply = self.senders[si]
                    .state
                    .respond_dummies(&queries, &mut self.rng)
                    .map_err(Failure::Sender)?;
                client
                    .dummy_finish(id, batch_id, reply)
                    .map_err(Failure::Service)
            }
        }
    }

    fn event(&mut self, mut value: Value) {
        value["seq"] = json!(self.events.len());
        (self.observer)(&value);
        self.events.push(value);
    }
}

/// Runs `spec` through `client`, which must reach an AS with a manual clock.
pub fn run<T: Transport>(
    spec: &RunSpec,
    seed: u64,
    client: &Client<T>,
) -> Result<RunResult, HarnessError> {
    run_observed(spec, seed, client, &mut |_| {})
}

/// Like [`run`], calling `observer` with each event as it is emitted.
pub fn run_observed<T: Transport>(
    spec: &RunSpec,
    seed: u64,
    client: &Client<T>,
    observer: &mut dyn FnMut(&Value),
) -> Result<RunResult, HarnessError> {
    spec.validate()?;
    let params = client.params().map_err(|source| HarnessError::Service {
        context: "fetching parameters".into(),
        source,
    })?;
    let cfg = params.config.clone();
    let dur = cfg.epoch_dur;
    let base = cfg.epoch_of(params.now);
    let mut run = Run {
        client,
        observer,
        rng: ChaCha20Rng::seed_from_u64(seed),
        senders: Vec::new(),
        receivers: spec
            .receivers
            .iter()
            .map(|name| {
                (
                    name.clone(),
                    ReceiverState::new(name.as_bytes(), ReceiverConfig::from(&params)),
                )
            })
            .collect(),
        reports: BTreeMap::new(),
        events: Vec::new(),
        mismatches: Vec::new(),
    };
    run.set_clock(base * dur)?;
    for name in &spec.senders {
        let id = run.service(format!("registering {name}"), client.register())?;
        run.senders.push(Sender {
            name: name.clone(),
            state: SenderState::new(id, params.pk, cfg.group, dur),
            keys: BTreeMap::new(),
            noisy_counts: Vec::new(),
            verdicts: Vec::new(),
        });
        run.event(json!({"op": "register", "t": base * dur, "sender": name, "id": id.to_hex()}));
    }

    let mut actions: Vec<&Action> = spec.actions.iter().collect();
    actions.sort_by_key(|a| (a.epoch, a.at));
    let mut ids: BTreeMap<AccountId, usize> = BTreeMap::new();
    for (i, s) in run.senders.iter().enumerate() {
        ids.insert(s.state.id(), i);
    }

    for offset in 0..spec.epochs + cfg.expiry {
        let epoch = base + offset;
        let start = epoch * dur;
        run.set_clock(start)?;
        if offset < spec.epochs {
            for i in 0..run.senders.len() {
                let (epk, _) = run.senders[i].state.epoch_key(epoch, &mut run.rng);
                let id = run.senders[i].state.id();
                let name = run.senders[i].name.clone();
                run.service(
                    format!("epoch key for {name}"),
                    client.register_epoch_key(id, epk),
                )?;
                run.event(json!({"op": "epoch-key", "t": start, "epoch": epoch, "sender": name}));
            }
        }
        for action in actions.iter().filter(|a| a.epoch == offset) {
            let now = start + action.at;
            run.set_clock(now)?;
            let outcome = run.perform(action, epoch, now);
            let result = outcome.err().map_or_else(|| "ok".to_owned(), |f| f.label());
            let mut event = json!({
                "op": action.op.label(),
                "t": now,
                "epoch": epoch,
                "sender": action.sender,
                "result": result,
            });
            if let Some(r) = &action.receiver {
                event["receiver"] = json!(r);
            }
            if let Some(expected) = &action.expect {
                event["expected"] = json!(expected);
                if *expected != result {
                    run.mismatches.push(format!(
                        "{} by {} at t={now}: expected {expected}, got {result}",
                        action.op.label(),
                        action.sender
                    ));
                }
            }
            run.event(event);
        }

        let summary = run.service(format!("rolling epoch {epoch}"), client.roll(epoch))?;
        for (id, sc, noisy) in summary.outcomes {
            let Some(&i) = ids.get(&id) else { continue };
            run.senders[i].noisy_counts.push(noisy);
            let name = run.senders[i].name.clone();
            run.event(json!({"op": "roll", "epoch": epoch, "sender": name, "sc": sc, "noisy_count": noisy}));

            let proof = run.service(format!("proof for {name}"), client.proof(id, epoch))?;
            let verdict = match proof.token_epoch {
                Some(t) => run.senders[i]
                    .state
                    .esk(t)
                    .is_some_and(|esk| verify_report_proof(&proof.tokens, noisy, &esk)),
                None => proof.tokens.is_empty() && noisy == 0,
            };
            run.senders[i].verdicts.push(verdict);
            run.event(json!({
                "op": "proof",
                "epoch": epoch,
                "sender": name,
                "tokens": proof.tokens.len(),
                "verdict": if verdict { "accept" } else { "reject" },
            }));
        }
    }

    let end = (base + spec.epochs + cfg.expiry) * dur;
    run.set_clock(end)?;
    let mut summaries = Vec::new();
    for i in 0..run.senders.len() {
        let id = run.senders[i].state.id();
        let info = run.service("final score", client.score(id))?;
        let s = &run.senders[i];
        let summary = SenderSummary {
            name: s.name.clone(),
            id: id.to_hex(),
            sc: info.sc,
            level: format!("{:?}", info.level),
            noisy_counts: s.noisy_counts.clone(),
            verdicts: s.verdicts.clone(),
        };
        let verdicts: Vec<&str> = summary
            .verdicts
            .iter()
            .map(|&v| if v { "accept" } else { "reject" })
            .collect();
        run.event(json!({
            "op": "final",
            "t": end,
            "sender": summary.name,
            "sc": summary.sc,
            "level": summary.level,
            "noisy_counts": summary.noisy_counts,
            "verdicts": verdicts,
        }));
        summaries.push(summary);
    }
    Ok(RunResult {
        events: run.events,
        senders: summaries,
        mismatches: run.mismatches,
    })
}

/// AS randomness for embedded runs, derived from the run seed.
pub fn embedded_seed(seed: u64) -> u64 {
    seed ^ 0x5341_4e44_495f_4153
}

/// Runs `spec` against an in-process AS built from the spec's settings. The service is
/// returned for inspection.
pub fn run_embedded(spec: &RunSpec, seed: u64) -> Result<(RunResult, Service), HarnessError> {
    let service = embedded_service(spec, seed)?;
    let result = run(spec, seed, &Client::new(&service))?;
    Ok((result, service))
}

/// The in-process AS that [`run_embedded`] uses for `spec` and `seed`.
pub fn embedded_service(spec: &RunSpec, seed: u64) -> Result<Service, HarnessError> {
    Service::new(
        spec.config.to_as_config()?,
        ClockMode::Manual,
        Some(embedded_seed(seed)),
    )
    .map_err(|e| HarnessError::Spec(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_REPORT: &str = r#"
senders = ["alice"]
receivers = ["bob"]
epochs = 1

[[action]]
epoch = 0
at = 10
op = "send"
sender = "alice"
receiver = "bob"
expect = "ok"

[[action]]
epoch = 0
at = 20
op = "report"
sender = "alice"
receiver = "bob"
expect = "ok"
"#;

    #[test]
    fn single_report_ends_with_an_accepted_proof() {
        let spec = RunSpec::from_toml(ONE_REPORT).unwrap();
        let (result, service) = run_embedded(&spec, 1).unwrap();
        assert!(result.success(), "{:?}", result.mismatches);
        let last = result.events.last().unwrap();
        assert_eq!(last["op"], "final");
        assert_eq!(last["verdicts"], json!(["accept", "accept", "accept"]));
        assert_eq!(service.server().stored_token_count(), 1);
    }

    #[test]
    fn duplicate_report_counts_once() {
        let with_replay = format!(
            "{ONE_REPORT}\n[[action]]\nepoch = 0\nat = 30\nop = \"replay\"\nsender = \"alice\"\nreceiver = \"bob\"\nexpect = \"ok\"\n"
        );
        let spec = RunSpec::from_toml(&with_replay).unwrap();
        let (replayed, service) = run_embedded(&spec, 9).unwrap();
        assert!(replayed.success());
        assert_eq!(service.server().stored_token_count(), 1);
        let (plain, _) = run_embedded(&RunSpec::from_toml(ONE_REPORT).unwrap(), 9).unwrap();
        assert_eq!(plain.senders, replayed.senders);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let spec = RunSpec::from_toml(ONE_REPORT).unwrap();
        let a = run_embedded(&spec, 5).unwrap().0.transcript();
        let b = run_embedded(&spec, 5).unwrap().0.transcript();
        assert_eq!(a, b);
        assert_ne!(a, run_embedded(&spec, 6).unwrap().0.transcript());
    }

    #[test]
    fn expectations_are_checked() {
        let spec = RunSpec::from_toml(&ONE_REPORT.replacen(
            "expect = \"ok\"",
            "expect = \"key-budget\"",
            1,
        ))
        .unwrap();
        let (result, _) = run_embedded(&spec, 2).unwrap();
        assert_eq!(result.mismatches.len(), 1);
        assert!(!result.success());
    }

    #[test]
    fn rejects_inconsistent_specs() {
        let unknown = ONE_REPORT.replacen("sender = \"alice\"", "sender = \"mallory\"", 1);
        assert!(RunSpec::from_toml(&unknown).is_err());
        let late = ONE_REPORT.replacen("epoch = 0", "epoch = 1", 1);
        assert!(RunSpec::from_toml(&late).is_err());
        let no_receiver = ONE_REPORT.replacen("receiver = \"bob\"\n", "", 1);
        assert!(RunSpec::from_toml(&no_receiver).is_err());
    }
}
