//! Per-cycle memory event records and the counters folded from them.

use super::memory::{BankId, StallReason};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EngineKind {
    Forward,
    Plasticity,
}

/// One engine instance: the forward or plasticity engine of a layer
/// (`layer` is 0-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct UnitId {
    pub engine: EngineKind,
    pub layer: u8,
}

impl UnitId {
    pub const F1: UnitId = UnitId {
        engine: EngineKind::Forward,
        layer: 0,
    };
    pub const P1: UnitId = UnitId {
        engine: EngineKind::Plasticity,
        layer: 0,
    };
    pub const F2: UnitId = UnitId {
        engine: EngineKind::Forward,
        layer: 1,
    };
    pub const P2: UnitId = UnitId {
        engine: EngineKind::Plasticity,
        layer: 1,
    };
    pub const ALL: [UnitId; 4] = [UnitId::F1, UnitId::P1, UnitId::F2, UnitId::P2];

    pub fn index(self) -> usize {
        match (self.engine, self.layer) {
            (EngineKind::Forward, 0) => 0,
            (EngineKind::Plasticity, 0) => 1,
            (EngineKind::Forward, _) => 2,
            (EngineKind::Plasticity, _) => 3,
        }
    }
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = match self.engine {
            EngineKind::Forward => 'F',
            EngineKind::Plasticity => 'P',
        };
        write!(f, "{e}{}", self.layer + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    PreTrace,
    Potential,
    Psum,
    Neuron,
    PostTrace,
    TraceFetch,
    Coeff,
    WeightRead,
    WeightWrite,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PreTrace => "pre_trace",
            Stage::Potential => "potential",
            Stage::Psum => "psum",
            Stage::Neuron => "neuron",
            Stage::PostTrace => "post_trace",
            Stage::TraceFetch => "trace_fetch",
            Stage::Coeff => "coeff",
            Stage::WeightRead => "weight_read",
            Stage::WeightWrite => "weight_write",
        }
    }
}

/// Schedule phase a unit run belongs to. With a stream of `T` timesteps:
/// the first layer-1 forward is the prologue; layer-1 plasticity with
/// layer-2 forward of the same timestep is phase A; layer-2 plasticity with
/// the next layer-1 forward is phase B; the last layer-2 plasticity is the
/// epilogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Phase {
    Prologue,
    A,
    B,
    Epilogue,
}

impl Phase {
    pub fn of(unit: UnitId, t: usize, steps: usize) -> Phase {
        match unit {
            UnitId::F1 if t == 0 => Phase::Prologue,
            UnitId::F1 => Phase::B,
            UnitId::P2 if t + 1 == steps => Phase::Epilogue,
            UnitId::P2 => Phase::B,
            _ => Phase::A,
        }
    }
}

/// One memory request outcome in one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleEvent {
    pub cycle: u64,
    pub unit: UnitId,
    pub stage: Stage,
    pub phase: Phase,
    /// Timestep within the stream.
    pub timestep: usize,
    pub write: bool,
    pub bank: BankId,
    pub addr: u32,
    pub stall: Option<StallReason>,
}

impl CycleEvent {
    /// `cycle,engine,stage,layer,op,addr,stall_reason`
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}:{},{}",
            self.cycle,
            match self.unit.engine {
                EngineKind::Forward => "forward",
                EngineKind::Plasticity => "plasticity",
            },
            self.stage.as_str(),
            self.unit.layer + 1,
            if self.write { "write" } else { "read" },
            self.bank,
            self.addr,
            self.stall.map_or("-", StallReason::as_str)
        )
    }
}

pub const TRACE_HEADER: &str = "cycle,engine,stage,layer,op,addr,stall_reason";

pub fn export_lines(events: &[CycleEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 40 + 64);
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for e in events {
        out.push_str(&e.to_line());
        out.push('\n');
    }
    out
}

/// Aggregates over a stream run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub cycles: u64,
    pub stall_events: u64,
    /// Cycles with at least one stalled request.
    pub stall_cycles: u64,
    /// Cycles with memory activity from two or more units.
    pub overlap_cycles: u64,
    pub read_grants: u64,
    pub write_grants: u64,
    /// Weight words fetched by the forward engines.
    pub weight_fetches: u64,
    pub stalls_by_reason: BTreeMap<StallReason, u64>,
}

impl Counters {
    /// Recomputes the counters from a full event record.
    pub fn from_events(events: &[CycleEvent]) -> Counters {
        let mut c = Counters::default();
        let mut units: BTreeMap<u64, BTreeSet<UnitId>> = BTreeMap::new();
        let mut stalled: BTreeSet<u64> = BTreeSet::new();
        for e in events {
            c.cycles = c.cycles.max(e.cycle + 1);
            units.entry(e.cycle).or_default().insert(e.unit);
            match e.stall {
                Some(r) => {
                    c.stall_events += 1;
                    *c.stalls_by_reason.entry(r).or_default() += 1;
                    stalled.insert(e.cycle);
                }
                None if e.write => c.write_grants += 1,
                None => {
                    c.read_grants += 1;
                    if e.unit.engine == EngineKind::Forward && matches!(e.bank, BankId::Weight(_)) {
                        c.weight_fetches += 1;
                    }
                }
            }
        }
        c.stall_cycles = stalled.len() as u64;
        c.overlap_cycles = units.values().filter(|s| s.len() >= 2).count() as u64;
        c
    }

    /// Sums counters of consecutive streams.
    pub fn accumulate(&mut self, other: &Counters) {
        self.cycles += other.cycles;
        self.stall_events += other.stall_events;
        self.stall_cycles += other.stall_cycles;
        self.overlap_cycles += other.overlap_cycles;
        self.read_grants += other.read_grants;
        self.write_grants += other.write_grants;
        self.weight_fetches += other.weight_fetches;
        for (r, n) in &other.stalls_by_reason {
            *self.stalls_by_reason.entry(*r).or_default() += n;
        }
    }

    pub fn overlap_ratio(&self) -> f64 {
        if self.cycles == 0 {
            0.0
        } else {
            self.overlap_cycles as f64 / self.cycles as f64
        }
    }
}
