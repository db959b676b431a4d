//! Accelerator state and the cycle loop.

use super::config::HardwareConfig;
use super::engine::{EngineRequest, ForwardRun, Layout, PlasticityRun, Run};
use super::memory::{BankId, BankRequest, MemoryBank, Outcome};
use super::trace::{Counters, CycleEvent, EngineKind, Phase, UnitId};
use super::SimError;
use crate::half::Half;
use crate::snn::{Matrix, NetworkConfig, NetworkState, PlasticityRule, SnnError};

/// Slack added to the largest bank size when deciding that nothing can move:
/// covers the longest latency chain between two grants.
const DEADLOCK_SLACK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulePolicy {
    /// Units start as soon as their inputs exist; fine-grained gates on the
    /// banks keep the reordering invisible.
    #[default]
    Overlapped,
    /// One unit at a time in reference order.
    Serial,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub policy: SchedulePolicy,
    /// Keep every per-cycle event (memory heavy on large networks).
    pub record_events: bool,
}

/// Cycle span of one unit run, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpan {
    pub unit: UnitId,
    pub timestep: usize,
    pub phase: Phase,
    pub start: u64,
    pub end: u64,
}

impl RunSpan {
    pub fn cycles(&self) -> u64 {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Default)]
pub struct StreamReport {
    /// Output-layer spikes per timestep.
    pub outputs: Vec<Vec<bool>>,
    /// Hidden-layer spikes per timestep.
    pub hidden: Vec<Vec<bool>>,
    pub counters: Counters,
    pub events: Vec<CycleEvent>,
    pub spans: Vec<RunSpan>,
    /// Reads or writes that observed a word version other than the one the
    /// reference order implies. Empty on a correct schedule.
    pub ordering_violations: Vec<String>,
}

fn bank_slot(b: BankId) -> usize {
    match b {
        BankId::Weight(l) => l as usize,
        BankId::Coeff(l) => 2 + l as usize,
        BankId::Potential(l) => 4 + l as usize,
        BankId::Trace => 6,
    }
}

const BANKS: [BankId; 7] = [
    BankId::Weight(0),
    BankId::Weight(1),
    BankId::Coeff(0),
    BankId::Coeff(1),
    BankId::Potential(0),
    BankId::Potential(1),
    BankId::Trace,
];

/// On-chip state of the accelerator. Persists across streams.
#[derive(Debug, Clone)]
pub struct Accelerator {
    hw: HardwareConfig,
    layout: Layout,
    config: NetworkConfig,
    banks: Vec<MemoryBank>,
    /// Timesteps executed since the banks were loaded.
    timestep: u64,
    last_spikes: [Vec<bool>; 2],
}

impl Accelerator {
    /// Loads weights, coefficients, potentials and traces into the banks.
    pub fn new(hw: &HardwareConfig, state: &NetworkState, rule: &PlasticityRule) -> Result<Accelerator, SimError> {
        hw.validate()?;
        let config = state.config;
        config.validate()?;
        rule.check_shape(&config)?;
        let layout = Layout::new(hw, config.n_in, config.n_hidden, config.n_out);
        let pe = layout.pe;
        let mut banks: Vec<MemoryBank> = BANKS
            .iter()
            .map(|&b| {
                let (words, width) = match b {
                    BankId::Weight(l) => (layout.weight_words(l as usize), pe),
                    BankId::Coeff(l) => (layout.weight_words(l as usize) * layout.groups, layout.lanes * 4),
                    BankId::Potential(l) => (layout.tiles(l as usize), pe),
                    BankId::Trace => (layout.trace_words(), pe),
                };
                MemoryBank::new(b, words, width)
            })
            .collect();

        for l in 0..2 {
            let weights = &state.layers[l].weights;
            let lr = &rule.layers[l];
            for k in 0..layout.tiles(l) {
                let n = layout.valid_lanes(l + 1, k);
                for j in 0..layout.n_pre(l) {
                    let m = layout.weight_addr(l, k, j);
                    let mut word = vec![Half::ZERO; pe];
                    for (p, w) in word.iter_mut().enumerate().take(n) {
                        *w = weights.get(k * pe + p, j);
                    }
                    banks[bank_slot(BankId::Weight(l as u8))].load_word(m, &word);
                    for g in 0..layout.groups {
                        let mut cw = vec![Half::ZERO; layout.lanes * 4];
                        for q in 0..layout.lanes {
                            let p = g * layout.lanes + q;
                            if p >= n {
                                break;
                            }
                            let c = lr.coefficients(k * pe + p, j);
                            cw[q * 4..q * 4 + 4].copy_from_slice(&[c.alpha, c.beta, c.gamma, c.delta]);
                        }
                        banks[bank_slot(BankId::Coeff(l as u8))].load_word(layout.coeff_addr(m as usize, g), &cw);
                    }
                }
            }
            load_vector(&mut banks[bank_slot(BankId::Potential(l as u8))], 0, pe, &state.layers[l].v);
        }
        let traces = [&state.input_trace, &state.layers[0].post_trace, &state.layers[1].post_trace];
        for (pop, t) in traces.into_iter().enumerate() {
            load_vector(&mut banks[6], layout.trace_base[pop], pe, t);
        }
        Ok(Accelerator {
            hw: hw.clone(),
            layout,
            config,
            banks,
            timestep: 0,
            last_spikes: [state.layers[0].out_spikes.clone(), state.layers[1].out_spikes.clone()],
        })
    }

    pub fn hardware(&self) -> &HardwareConfig {
        &self.hw
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn timesteps_run(&self) -> u64 {
        self.timestep
    }

    pub fn bank(&self, id: BankId) -> &MemoryBank {
        &self.banks[bank_slot(id)]
    }

    /// Reads the banks back into the reference state layout.
    pub fn to_network_state(&self) -> NetworkState {
        let c = self.config;
        let pe = self.layout.pe;
        let mut layers = Vec::with_capacity(2);
        for l in 0..2 {
            let (n_pre, n_post) = (self.layout.n_pre(l), self.layout.n_post(l));
            let wb = self.bank(BankId::Weight(l as u8));
            let mut weights = Matrix::zeros(n_post, n_pre);
            for i in 0..n_post {
                for j in 0..n_pre {
                    let word = wb.word(self.layout.weight_addr(l, i / pe, j));
                    weights.set(i, j, word[i % pe]);
                }
            }
            layers.push(crate::snn::LayerState {
                weights,
                v: read_vector(self.bank(BankId::Potential(l as u8)), 0, pe, n_post),
                post_trace: read_vector(self.bank(BankId::Trace), self.layout.trace_base[l + 1], pe, n_post),
                out_spikes: self.last_spikes[l].clone(),
            });
        }
        let [l1, l2]: [crate::snn::LayerState; 2] = layers.try_into().expect("two layers");
        NetworkState {
            config: c,
            input_trace: read_vector(self.bank(BankId::Trace), 0, pe, c.n_in),
            layers: [l1, l2],
        }
    }

    /// Runs `inputs.len()` timesteps, each a full inference-plus-adaptation
    /// step, starting from the current bank contents.
    pub fn run_stream(&mut self, inputs: &[Vec<bool>], opts: &RunOptions) -> Result<StreamReport, SimError> {
        if let Some(s) = inputs.iter().find(|s| s.len() != self.config.n_in) {
            return Err(SnnError::Dimension {
                what: "input spikes",
                expected: self.config.n_in,
                got: s.len(),
            }
            .into());
        }
        let steps = inputs.len();
        let mut report = StreamReport {
            hidden: vec![Vec::new(); steps],
            outputs: vec![Vec::new(); steps],
            ..StreamReport::default()
        };
        if steps == 0 {
            return Ok(report);
        }

        let mut active: [Option<(usize, u64, Run)>; 4] = [None, None, None, None];
        let mut next_t = [0usize; 4];
        let mut done = [vec![false; steps], vec![false; steps], vec![false; steps], vec![false; steps]];
        let serial_order: Vec<(UnitId, usize)> = (0..steps)
            .flat_map(|t| UnitId::ALL.into_iter().map(move |u| (u, t)))
            .collect();
        let mut serial_next = 0usize;

        let mut cycle: u64 = 0;
        let mut last_grant: u64 = 0;
        let mut reqs: Vec<EngineRequest> = Vec::new();
        let mut owners: Vec<usize> = Vec::new();
        let mut per_bank: Vec<Vec<BankRequest>> = vec![Vec::new(); BANKS.len()];
        let mut blocked: Vec<String> = Vec::new();
        let patience = self.banks.iter().map(|b| b.len() as u64).max().unwrap_or(0) + DEADLOCK_SLACK;

        loop {
            // Start every unit whose inputs exist.
            for u in UnitId::ALL {
                let ui = u.index();
                if active[ui].is_some() || next_t[ui] == steps {
                    continue;
                }
                let t = next_t[ui];
                let ready = match opts.policy {
                    SchedulePolicy::Serial => {
                        active.iter().all(Option::is_none) && serial_order.get(serial_next) == Some(&(u, t))
                    }
                    SchedulePolicy::Overlapped => match u {
                        UnitId::F1 => true,
                        UnitId::P1 | UnitId::F2 => done[0][t],
                        _ => done[2][t],
                    },
                };
                if !ready {
                    continue;
                }
                if opts.policy == SchedulePolicy::Serial {
                    serial_next += 1;
                }
                let run = self.make_run(u, t, inputs, &report.hidden, cycle);
                active[ui] = Some((t, cycle, run));
            }
            if active.iter().all(Option::is_none) {
                break;
            }

            reqs.clear();
            owners.clear();
            for (ui, slot) in active.iter_mut().enumerate() {
                if let Some((_, _, run)) = slot {
                    let before = reqs.len();
                    run.propose(cycle, &mut reqs);
                    owners.extend(std::iter::repeat_n(ui, reqs.len() - before));
                }
            }
            for b in per_bank.iter_mut() {
                b.clear();
            }
            for (id, r) in reqs.iter().enumerate() {
                per_bank[bank_slot(r.bank)].push(BankRequest {
                    id,
                    addr: r.addr,
                    access: r.access.clone(),
                });
            }

            let mut unit_seen = [false; 4];
            let mut stalled = false;
            let mut granted_any = false;
            blocked.clear();
            for (slot, list) in per_bank.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let outcomes = self.banks[slot].arbitrate(cycle, list)?;
                for (br, outcome) in list.iter().zip(outcomes) {
                    let r = &reqs[br.id];
                    let ui = owners[br.id];
                    let (t, _, run) = active[ui].as_mut().expect("owner is active");
                    let t = *t;
                    let unit = UnitId::ALL[ui];
                    unit_seen[ui] = true;
                    let gt = self.timestep + t as u64;
                    let stall = match outcome {
                        Outcome::ReadGranted { data, version } => {
                            let want = expected_read_version(unit.engine, r.bank, gt);
                            if version != want {
                                report.ordering_violations.push(format!(
                                    "cycle {cycle}: {unit} t={t} read {}:{} saw version {version}, expected {want}",
                                    r.bank, r.addr
                                ));
                            }
                            run.on_grant(r.stream, cycle, Some(data));
                            report.counters.read_grants += 1;
                            if unit.engine == EngineKind::Forward && matches!(r.bank, BankId::Weight(_)) {
                                report.counters.weight_fetches += 1;
                            }
                            None
                        }
                        Outcome::WriteGranted { version } => {
                            if version != gt + 1 {
                                report.ordering_violations.push(format!(
                                    "cycle {cycle}: {unit} t={t} wrote {}:{} as version {version}, expected {}",
                                    r.bank,
                                    r.addr,
                                    gt + 1
                                ));
                            }
                            run.on_grant(r.stream, cycle, None);
                            report.counters.write_grants += 1;
                            None
                        }
                        Outcome::Stalled(reason) => {
                            stalled = true;
                            report.counters.stall_events += 1;
                            *report.counters.stalls_by_reason.entry(reason).or_default() += 1;
                            blocked.push(format!(
                                "{unit} t={t} {} {}:{} ({})",
                                r.stage.as_str(),
                                r.bank,
                                r.addr,
                                reason.as_str()
                            ));
                            Some(reason)
                        }
                    };
                    granted_any |= stall.is_none();
                    if opts.record_events {
                        report.events.push(CycleEvent {
                            cycle,
                            unit,
                            stage: r.stage,
                            phase: Phase::of(unit, t, steps),
                            timestep: t,
                            write: r.access.is_write(),
                            bank: r.bank,
                            addr: r.addr,
                            stall,
                        });
                    }
                }
            }
            if stalled {
                report.counters.stall_cycles += 1;
            }
            if unit_seen.iter().filter(|&&s| s).count() >= 2 {
                report.counters.overlap_cycles += 1;
            }

            for (ui, slot) in active.iter_mut().enumerate() {
                let finished = slot.as_ref().is_some_and(|(_, _, run)| run.is_done());
                if !finished {
                    continue;
                }
                let (t, start, run) = slot.take().expect("checked above");
                let unit = UnitId::ALL[ui];
                if let Run::Forward(f) = &run {
                    let spikes = f.out_spikes();
                    if unit == UnitId::F1 {
                        report.hidden[t] = spikes;
                    } else {
                        report.outputs[t] = spikes;
                    }
                }
                report.spans.push(RunSpan {
                    unit,
                    timestep: t,
                    phase: Phase::of(unit, t, steps),
                    start,
                    end: cycle,
                });
                done[ui][t] = true;
                next_t[ui] += 1;
            }

            if granted_any {
                last_grant = cycle;
            } else if cycle - last_grant > patience {
                if blocked.is_empty() {
                    blocked.push("no requests pending".into());
                }
                return Err(SimError::Deadlock {
                    cycle: last_grant,
                    blocked: blocked.join("; "),
                });
            }
            cycle += 1;
        }

        report.counters.cycles = cycle;
        self.timestep += steps as u64;
        self.last_spikes = [report.hidden[steps - 1].clone(), report.outputs[steps - 1].clone()];
        Ok(report)
    }

    fn make_run(&self, unit: UnitId, t: usize, inputs: &[Vec<bool>], hidden: &[Vec<bool>], start: u64) -> Run {
        let gt = self.timestep + t as u64;
        let c = &self.config;
        let hw = &self.hw;
        let lay = &self.layout;
        match unit {
            UnitId::F1 => Run::Forward(ForwardRun::new(
                0,
                gt,
                lay,
                hw,
                c.v_th,
                c.lambda,
                inputs[t].clone(),
                true,
                (gt > 0).then_some(1),
                // hidden trace feeds both plasticity engines
                (gt > 0).then_some(2),
                start,
            )),
            UnitId::F2 => Run::Forward(ForwardRun::new(
                1,
                gt,
                lay,
                hw,
                c.v_th,
                c.lambda,
                hidden[t].clone(),
                false,
                None,
                (gt > 0).then_some(1),
                start,
            )),
            UnitId::P1 => Run::Plasticity(PlasticityRun::new(0, gt, lay, hw)),
            _ => Run::Plasticity(PlasticityRun::new(1, gt, lay, hw)),
        }
    }
}

/// Word version a read at timestep `t` must observe under the reference
/// order: weights, potentials and own traces have been written once per
/// earlier timestep; traces read for plasticity already carry timestep `t`.
fn expected_read_version(engine: EngineKind, bank: BankId, t: u64) -> u64 {
    match (engine, bank) {
        (_, BankId::Coeff(_)) => 0,
        (EngineKind::Plasticity, BankId::Trace) => t + 1,
        _ => t,
    }
}

fn load_vector(bank: &mut MemoryBank, base: u32, pe: usize, values: &[Half]) {
    for (w, chunk) in values.chunks(pe).enumerate() {
        let mut word = vec![Half::ZERO; pe];
        word[..chunk.len()].copy_from_slice(chunk);
        bank.load_word(base + w as u32, &word);
    }
}

fn read_vector(bank: &MemoryBank, base: u32, pe: usize, n: usize) -> Vec<Half> {
    (0..n).map(|i| bank.word(base + (i / pe) as u32)[i % pe]).collect()
}
