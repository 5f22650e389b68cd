//! Timings of the per-message operations.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use sandi_core::receiver::{ReceiverConfig, ReceiverState};
use sandi_core::sender::SenderState;
use sandi_core::server::{AccountabilityServer, AsConfig, AsError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Operation {
    /// AS work for one tag request.
    TagIssue,
    /// Receiver verification of a full tag.
    TagReceive,
    /// Receiver report creation plus AS report handling.
    TagReport,
}

impl Operation {
    pub const ALL: [Operation; 3] = [
        Operation::TagIssue,
        Operation::TagReceive,
        Operation::TagReport,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Operation::TagIssue => "TagIssue",
            Operation::TagReceive => "TagReceive",
            Operation::TagReport => "TagReport",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Timing {
    pub op: Operation,
    pub samples: Vec<Duration>,
}

impl Timing {
    pub fn median(&self) -> Duration {
        let mut sorted = self.samples.clone();
        sorted.sort();
        sorted[sorted.len() / 2]
    }

    pub fn mean(&self) -> Duration {
        self.samples.iter().sum::<Duration>() / self.samples.len() as u32
    }

    pub fn max(&self) -> Duration {
        self.samples.iter().copied().max().unwrap_or_default()
    }
}

/// Runs `iterations` full send/receive/report rounds, timing each stage.
pub fn run(iterations: usize, seed: u64) -> Result<Vec<Timing>, AsError> {
    assert!(iterations > 0);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let config = AsConfig::default();
    let server = AccountabilityServer::setup(config.clone(), &mut rng)?;
    let now = 10;
    let params = server.public_params(now);

    let mut timings: Vec<Timing> = Operation::ALL
        .iter()
        .map(|&op| Timing {
            op,
            samples: Vec::with_capacity(iterations),
        })
        .collect();
    for i in 0..iterations {
        // One account per round keeps each within its channel key budget.
        let id = server.create_account(now, &mut rng)?;
        let mut sender = SenderState::new(id, server.public_key(), config.group, config.epoch_dur);
        let (epk, _) = sender.epoch_key(0, &mut rng);
        server.register_epoch_key(&id, epk, now)?;
        let mut receiver = ReceiverState::new(
            format!("receiver-{i}").as_bytes(),
            ReceiverConfig::from(&params),
        );
        let vk = sender.new_channel_key(b"bench", &mut rng);
        let (com_s, com_r) = sender
            .begin_tag_request(&vk, receiver.address(), now, &mut rng)
            .expect("fresh channel");

        let start = Instant::now();
        let tag = server.issue_tag(&id, com_s, com_r, now, &mut rng)?;
        timings[0].samples.push(start.elapsed());

        let full = sender
            .complete_tag(tag, now, &mut rng)
            .expect("AS tag verifies");
        let start = Instant::now();
        receiver
            .receive_tag(&full, now)
            .expect("fresh tag verifies");
        timings[1].samples.push(start.elapsed());

        let report_at = now + config.report_lock;
        let start = Instant::now();
        let report = receiver.report(&vk, report_at).expect("lock has passed");
        server.handle_report(&report, report_at)?;
        timings[2].samples.push(start.elapsed());
    }
    Ok(timings)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_operation_is_timed() {
        let timings = run(3, 1).unwrap();
        assert_eq!(timings.len(), 3);
        for t in &timings {
            assert_eq!(t.samples.len(), 3);
            assert!(t.median() <= t.max());
        }
    }
}
