//! Dual-port on-chip banks with write-priority arbitration.
//!
//! A bank holds fixed-width words of halves. Each cycle at most two requests
//! per bank are granted. Writes are considered first; a read that targets a
//! word being written in the same cycle is held for one cycle and then sees
//! the new value. Requests may also carry valid-data gates: a read can demand
//! a minimum word version (read-after-write ordering), a write can demand that
//! the previous version has been consumed a number of times
//! (write-after-read ordering).

use super::SimError;
use crate::half::Half;
use std::fmt;

pub const PORTS_PER_BANK: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BankId {
    /// Weights of layer `l`, one word per (tile, presynaptic index).
    Weight(u8),
    /// Packed (alpha, beta, gamma, delta) coefficients of layer `l`.
    Coeff(u8),
    /// Membrane potentials of layer `l`, one word per tile.
    Potential(u8),
    /// All spike traces, shared by both engines.
    Trace,
}

impl fmt::Display for BankId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankId::Weight(l) => write!(f, "W{}", l + 1),
            BankId::Coeff(l) => write!(f, "C{}", l + 1),
            BankId::Potential(l) => write!(f, "V{}", l + 1),
            BankId::Trace => f.write_str("T"),
        }
    }
}

pub type Word = Vec<Half>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Access {
    Read {
        /// Hold the read until the word has been written at least this many
        /// times since load.
        min_version: Option<u64>,
        /// Counts towards the consumer tally checked by gated writes.
        consumer: bool,
    },
    Write {
        data: Word,
        /// Hold the write until the current version has been read by at least
        /// this many consumers.
        min_consumers: Option<u32>,
    },
}

impl Access {
    pub fn is_write(&self) -> bool {
        matches!(self, Access::Write { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StallReason {
    /// Same word is being written this cycle.
    WritePriority,
    /// Required version not yet committed.
    NotValid,
    /// Previous version not yet consumed.
    WarHold,
    /// Both ports already taken.
    PortBusy,
}

impl StallReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StallReason::WritePriority => "write_priority",
            StallReason::NotValid => "not_valid",
            StallReason::WarHold => "war_hold",
            StallReason::PortBusy => "port_busy",
        }
    }
}

/// A request as seen by one bank; `id` lets the caller route the outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankRequest {
    pub id: usize,
    pub addr: u32,
    pub access: Access,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// Read granted: data plus the version it carried.
    ReadGranted { data: Word, version: u64 },
    WriteGranted { version: u64 },
    Stalled(StallReason),
}

#[derive(Debug, Clone)]
pub struct MemoryBank {
    id: BankId,
    width: usize,
    words: Vec<Half>,
    versions: Vec<u64>,
    consumers: Vec<u32>,
}

impl MemoryBank {
    pub fn new(id: BankId, n_words: usize, width: usize) -> MemoryBank {
        MemoryBank {
            id,
            width,
            words: vec![Half::ZERO; n_words * width],
            versions: vec![0; n_words],
            consumers: vec![0; n_words],
        }
    }

    pub fn id(&self) -> BankId {
        self.id
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.versions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.versions.is_empty()
    }

    pub fn word(&self, addr: u32) -> &[Half] {
        let a = addr as usize * self.width;
        &self.words[a..a + self.width]
    }

    pub fn version(&self, addr: u32) -> u64 {
        self.versions[addr as usize]
    }

    /// Direct store used when loading state; bypasses arbitration and does
    /// not bump versions.
    pub fn load_word(&mut self, addr: u32, data: &[Half]) {
        assert_eq!(data.len(), self.width);
        let a = addr as usize * self.width;
        self.words[a..a + self.width].copy_from_slice(data);
    }

    pub fn reset_versions(&mut self) {
        self.versions.fill(0);
        self.consumers.fill(0);
    }

    /// Resolves one cycle's requests. Outcomes are returned in request order.
    ///
    /// Two writes to the same word in one cycle are a scheduling bug and are
    /// reported as an error rather than resolved.
    pub fn arbitrate(&mut self, cycle: u64, requests: &[BankRequest]) -> Result<Vec<Outcome>, SimError> {
        let mut outcomes = vec![Outcome::Stalled(StallReason::PortBusy); requests.len()];
        let mut ports = PORTS_PER_BANK;
        let mut written: Vec<u32> = Vec::with_capacity(PORTS_PER_BANK);
        let mut eligible: Vec<u32> = Vec::new();

        for (i, r) in requests.iter().enumerate() {
            let Access::Write { data, min_consumers } = &r.access else {
                continue;
            };
            self.check_addr(r.addr)?;
            if eligible.contains(&r.addr) {
                return Err(SimError::DoubleWrite {
                    cycle,
                    bank: self.id.to_string(),
                    addr: r.addr,
                });
            }
            let a = r.addr as usize;
            if min_consumers.is_some_and(|n| self.consumers[a] < n) {
                outcomes[i] = Outcome::Stalled(StallReason::WarHold);
                continue;
            }
            eligible.push(r.addr);
            if ports == 0 {
                continue;
            }
            ports -= 1;
            written.push(r.addr);
            assert_eq!(data.len(), self.width, "write width mismatch on {}", self.id);
            self.words[a * self.width..(a + 1) * self.width].copy_from_slice(data);
            self.versions[a] += 1;
            self.consumers[a] = 0;
            outcomes[i] = Outcome::WriteGranted {
                version: self.versions[a],
            };
        }
        for (i, r) in requests.iter().enumerate() {
            let Access::Read { min_version, consumer } = &r.access else {
                continue;
            };
            self.check_addr(r.addr)?;
            let a = r.addr as usize;
            outcomes[i] = if written.contains(&r.addr) {
                Outcome::Stalled(StallReason::WritePriority)
            } else if min_version.is_some_and(|v| self.versions[a] < v) {
                Outcome::Stalled(StallReason::NotValid)
            } else if ports == 0 {
                Outcome::Stalled(StallReason::PortBusy)
            } else {
                ports -= 1;
                if *consumer {
                    self.consumers[a] += 1;
                }
                Outcome::ReadGranted {
                    data: self.word(r.addr).to_vec(),
                    version: self.versions[a],
                }
            };
        }
        Ok(outcomes)
    }

    fn check_addr(&self, addr: u32) -> Result<(), SimError> {
        if (addr as usize) < self.len() {
            Ok(())
        } else {
            Err(SimError::AddressOutOfRange {
                bank: self.id.to_string(),
                addr,
            })
        }
    }
}
