//! Cycle-level model of the accelerator: dual-port banks, a forward engine
//! and a plasticity engine per layer, and a dataflow scheduler that overlaps
//! layer-1 plasticity with layer-2 inference.

pub mod config;
pub mod engine;
pub mod memory;
pub mod report;
pub mod sim;
pub mod trace;

pub use config::HardwareConfig;
pub use report::{assumptions, run_benchmark, BenchOptions, BenchResult, LatencyReport};
pub use sim::{Accelerator, RunOptions, RunSpan, SchedulePolicy, StreamReport};
pub use trace::{Counters, CycleEvent, Phase, UnitId};

use crate::snn::SnnError;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid hardware config: {0}")]
    Config(String),
    #[error("two writes to {bank}:{addr} in cycle {cycle}")]
    DoubleWrite { cycle: u64, bank: String, addr: u32 },
    #[error("address {addr} out of range for bank {bank}")]
    AddressOutOfRange { bank: String, addr: u32 },
    #[error("no progress since cycle {cycle}; blocked: {blocked}")]
    Deadlock { cycle: u64, blocked: String },
    #[error(transparent)]
    Snn(#[from] SnnError),
}
