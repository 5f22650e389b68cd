//! Append-only event log backing the AS database.
//!
//! Each mutation is written as one wire frame before the call that caused it returns.
//! Replaying the frames in order rebuilds the in-memory state. A frame cut short by a
//! crash is dropped from the tail on open.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::error::WireError;
use crate::primitives::Commitment;
use crate::server::{ProofEntry, SenderEpochRecord};
use crate::tag::{AccountId, SenderToken};
use crate::wire::{
    put_proof_entry, put_record, put_tokens, put_vks, read_proof_entry, read_record, read_tokens,
    read_vks, Reader, WireFrame, Writer,
};

pub mod event_type {
    pub const KEYS: u8 = 0x40;
    pub const RECORD: u8 = 0x41;
    pub const VKS: u8 = 0x42;
    pub const TOKEN: u8 = 0x43;
    pub const DUMMIES: u8 = 0x44;
    pub const PROOF: u8 = 0x45;
    pub const ROLLED: u8 = 0x46;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Keys {
        sym: [u8; 32],
        sig: [u8; 32],
    },
    Record {
        id: AccountId,
        epoch: u64,
        record: SenderEpochRecord,
    },
    Vks {
        id: AccountId,
        epoch: u64,
        vks: BTreeMap<Commitment, u64>,
    },
    Token {
        id: AccountId,
        epoch: u64,
        token: SenderToken,
    },
    Dummies {
        id: AccountId,
        epoch: u64,
        tokens: Vec<SenderToken>,
    },
    Proof {
        id: AccountId,
        epoch: u64,
        entry: ProofEntry,
    },
    Rolled {
        epoch: u64,
    },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt log entry at byte {offset}: {source}")]
    Corrupt { offset: usize, source: WireError },
}

impl Event {
    pub fn to_frame(&self) -> WireFrame {
        use event_type::*;
        let mut w = Writer::new();
        let ty = match self {
            Event::Keys { sym, sig } => {
                w.bytes(sym).bytes(sig);
                KEYS
            }
            Event::Record { id, epoch, record } => {
                w.bytes(&id.0).u64(*epoch);
                put_record(&mut w, record);
                RECORD
            }
            Event::Vks { id, epoch, vks } => {
                w.bytes(&id.0).u64(*epoch);
                put_vks(&mut w, vks);
                VKS
            }
            Event::Token { id, epoch, token } => {
                w.bytes(&id.0)
                    .u64(*epoch)
                    .bytes(&token.nonce)
                    .element(&token.sigma);
                TOKEN
            }
            Event::Dummies { id, epoch, tokens } => {
                w.bytes(&id.0).u64(*epoch);
                put_tokens(&mut w, tokens);
                DUMMIES
            }
            Event::Proof { id, epoch, entry } => {
                w.bytes(&id.0).u64(*epoch);
                put_proof_entry(&mut w, entry);
                PROOF
            }
            Event::Rolled { epoch } => {
                w.u64(*epoch);
                ROLLED
            }
        };
        WireFrame::new(ty, w.0)
    }

    pub fn from_frame(frame: &WireFrame) -> Result<Self, WireError> {
        use event_type::*;
        let mut r = Reader::new(&frame.body);
        let event = match frame.msg_type {
            KEYS => Event::Keys {
                sym: r.array()?,
                sig: r.array()?,
            },
            ROLLED => Event::Rolled { epoch: r.u64()? },
            ty => {
                let id = AccountId(r.array()?);
                let epoch = r.u64()?;
                match ty {
                    RECORD => Event::Record {
                        id,
                        epoch,
                        record: read_record(&mut r)?,
                    },
                    VKS => Event::Vks {
                        id,
                        epoch,
                        vks: read_vks(&mut r)?,
                    },
                    TOKEN => Event::Token {
                        id,
                        epoch,
                        token: SenderToken {
                            nonce: r.array()?,
                            sigma: r.element()?,
                        },
                    },
                    DUMMIES => Event::Dummies {
                        id,
                        epoch,
                        tokens: read_tokens(&mut r)?,
                    },
                    PROOF => Event::Proof {
                        id,
                        epoch,
                        entry: read_proof_entry(&mut r)?,
                    },
                    other => return Err(WireError::MessageType(other)),
                }
            }
        };
        r.finish()?;
        Ok(event)
    }
}

pub struct EventLog {
    file: File,
}

impl EventLog {
    /// Opens `path`, creating it if needed, and returns the events already recorded.
    pub fn open(path: &Path) -> Result<(EventLog, Vec<Event>), StoreError> {
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(path)?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)?;
        let mut events = Vec::new();
        let mut offset = 0;
        while offset < bytes.len() {
            match WireFrame::decode_prefix(&bytes[offset..]) {
                Ok((frame, used)) => {
                    let event = Event::from_frame(&frame)
                        .map_err(|source| StoreError::Corrupt { offset, source })?;
                    events.push(event);
                    offset += used;
                }
                Err(WireError::Truncated { .. }) => {
                    file.set_len(offset as u64)?;
                    break;
                }
                Err(source) => return Err(StoreError::Corrupt { offset, source }),
            }
        }
        Ok((EventLog { file }, events))
    }

    pub fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.file.write_all(&event.to_frame().encode())?;
        self.file.flush()?;
        Ok(())
    }

    /// Forces written events to stable storage.
    pub fn sync(&self) -> Result<(), StoreError> {
        self.file.sync_data()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{random_nonzero_scalar, GroupParams};
    use crate::primitives::commit;
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn sample_events(rng: &mut ChaCha20Rng) -> Vec<Event> {
        let g = GroupParams::default().generator;
        let id = AccountId::random(rng);
        let token = SenderToken {
            nonce: [7; 32],
            sigma: random_nonzero_scalar(rng) * g,
        };
        let mut vks = BTreeMap::new();
        vks.insert(commit(b"vk", rng).0, 7200);
        let mut record = SenderEpochRecord {
            epk: Some(random_nonzero_scalar(rng) * g),
            sc: 62.5,
            vks: vks.clone(),
            tokens: BTreeMap::new(),
            dummies: Some(vec![token]),
        };
        record.tokens.insert([1; 32], g);
        vec![
            Event::Keys {
                sym: [1; 32],
                sig: [2; 32],
            },
            Event::Record {
                id,
                epoch: 0,
                record,
            },
            Event::Vks { id, epoch: 0, vks },
            Event::Token {
                id,
                epoch: 0,
                token,
            },
            Event::Dummies {
                id,
                epoch: 0,
                tokens: vec![token, token],
            },
            Event::Proof {
                id,
                epoch: 2,
                entry: ProofEntry {
                    token_epoch: Some(0),
                    score_count: -3,
                    new_sc: 81.25,
                    shown: vec![token],
                },
            },
            Event::Rolled { epoch: 2 },
        ]
    }

    #[test]
    fn frames_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for event in sample_events(&mut rng) {
            let frame = event.to_frame();
            assert_eq!(Event::from_frame(&frame).unwrap(), event);
            let mut long = frame.clone();
            long.body.push(0);
            assert!(Event::from_frame(&long).is_err());
        }
    }

    #[test]
    fn log_reopens_and_drops_torn_tail() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let dir = std::env::temp_dir().join(format!("sandi-store-{}", rng.next_u64()));
        let events = sample_events(&mut rng);
        {
            let (mut log, existing) = EventLog::open(&dir).unwrap();
            assert!(existing.is_empty());
            for e in &events {
                log.append(e).unwrap();
            }
            log.sync().unwrap();
        }
        let full_len = std::fs::metadata(&dir).unwrap().len();
        let (_, replayed) = EventLog::open(&dir).unwrap();
        assert_eq!(replayed, events);

        let mut f = OpenOptions::new().append(true).open(&dir).unwrap();
        f.write_all(&[1, 0x41, 0, 0, 1]).unwrap();
        drop(f);
        let (mut log, replayed) = EventLog::open(&dir).unwrap();
        assert_eq!(replayed, events);
        assert_eq!(std::fs::metadata(&dir).unwrap().len(), full_len);
        log.append(&Event::Rolled { epoch: 3 }).unwrap();
        drop(log);
        let (_, replayed) = EventLog::open(&dir).unwrap();
        assert_eq!(replayed.len(), events.len() + 1);
        std::fs::remove_file(&dir).unwrap();
    }
}
