//! Forward and plasticity engines as cycle-stepped state machines.
//!
//! Each engine drives a handful of in-order request streams (at most one
//! request per stream per cycle). Values are computed from the data the banks
//! returned, so the simulator produces results, not just timings.

use super::config::HardwareConfig;
use super::memory::{Access, BankId, Word};
use super::trace::Stage;
use crate::half::{fused_psum, Half};
use crate::snn::{lif_step, plasticity_delta, trace_step, Coefficients};
use std::collections::BTreeMap;

/// How far the plasticity fetch streams may run ahead of the write stream.
const PLASTICITY_WINDOW: usize = 8;

/// Address map of all banks for one network shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub pe: usize,
    pub lanes: usize,
    pub groups: usize,
    /// Population sizes: input, hidden, output.
    pub pop: [usize; 3],
    /// First trace-bank word of each population.
    pub trace_base: [u32; 3],
}

impl Layout {
    pub fn new(hw: &HardwareConfig, n_in: usize, n_hidden: usize, n_out: usize) -> Layout {
        let pe = hw.pe_count;
        let pop = [n_in, n_hidden, n_out];
        let w = pop.map(|n| n.div_ceil(pe) as u32);
        Layout {
            pe,
            lanes: hw.plasticity_lanes,
            groups: hw.coeff_groups(),
            pop,
            trace_base: [0, w[0], w[0] + w[1]],
        }
    }

    pub fn words(&self, population: usize) -> usize {
        self.pop[population].div_ceil(self.pe)
    }

    pub fn trace_words(&self) -> usize {
        (0..3).map(|p| self.words(p)).sum()
    }

    pub fn n_pre(&self, layer: usize) -> usize {
        self.pop[layer]
    }

    pub fn n_post(&self, layer: usize) -> usize {
        self.pop[layer + 1]
    }

    pub fn tiles(&self, layer: usize) -> usize {
        self.words(layer + 1)
    }

    /// Weight word of tile `k` for presynaptic neuron `j`.
    pub fn weight_addr(&self, layer: usize, tile: usize, pre: usize) -> u32 {
        (tile * self.n_pre(layer) + pre) as u32
    }

    pub fn weight_words(&self, layer: usize) -> usize {
        self.tiles(layer) * self.n_pre(layer)
    }

    pub fn coeff_addr(&self, weight_word: usize, group: usize) -> u32 {
        (weight_word * self.groups + group) as u32
    }

    /// Lanes of tile `k` that map to real neurons.
    pub fn valid_lanes(&self, population: usize, word: usize) -> usize {
        (self.pop[population] - word * self.pe).min(self.pe)
    }
}

/// A request from one stream of a run.
#[derive(Debug, Clone)]
pub struct EngineRequest {
    pub stream: u8,
    pub stage: Stage,
    pub bank: BankId,
    pub addr: u32,
    pub access: Access,
}

fn read(stream: u8, stage: Stage, bank: BankId, addr: u32, min_version: Option<u64>, consumer: bool) -> EngineRequest {
    EngineRequest {
        stream,
        stage,
        bank,
        addr,
        access: Access::Read {
            min_version,
            consumer,
        },
    }
}

fn write(stream: u8, stage: Stage, bank: BankId, addr: u32, data: Word, min_consumers: Option<u32>) -> EngineRequest {
    EngineRequest {
        stream,
        stage,
        bank,
        addr,
        access: Access::Write {
            data,
            min_consumers,
        },
    }
}

#[derive(Debug, Clone, Copy)]
struct Latencies {
    read: u64,
    add: u64,
    neuron: u64,
    trace: u64,
    delta: u64,
    writeback: u64,
}

impl From<&HardwareConfig> for Latencies {
    fn from(hw: &HardwareConfig) -> Self {
        Latencies {
            read: hw.mem_read_latency,
            add: hw.fp_add_latency,
            neuron: hw.neuron_latency(),
            trace: hw.trace_latency(),
            delta: hw.delta_latency(),
            writeback: hw.writeback_latency,
        }
    }
}

/// Read-modify-write of a run of trace words with one spike per lane.
#[derive(Debug)]
struct TraceRmw {
    base: u32,
    spikes_known: bool,
    rd_next: usize,
    wr_next: usize,
    old: Vec<Option<(u64, Word)>>,
    min_consumers: Option<u32>,
}

impl TraceRmw {
    fn new(layout: &Layout, population: usize, min_consumers: Option<u32>, spikes_known: bool) -> TraceRmw {
        let words = layout.words(population);
        TraceRmw {
            base: layout.trace_base[population],
            spikes_known,
            rd_next: 0,
            wr_next: 0,
            old: vec![None; words],
            min_consumers,
        }
    }

    fn done(&self) -> bool {
        self.wr_next == self.old.len()
    }
}

const S_PRE_RD: u8 = 0;
const S_PRE_WR: u8 = 1;
const S_V_RD: u8 = 2;
const S_PSUM: u8 = 3;
const S_V_WR: u8 = 4;
const S_POST_RD: u8 = 5;
const S_POST_WR: u8 = 6;

struct NeuronOut {
    ready: u64,
    v: Word,
    spikes: Vec<bool>,
}

/// One forward pass of one layer.
pub struct ForwardRun {
    pub layer: usize,
    pub timestep: u64,
    layout: Layout,
    lat: Latencies,
    v_th: Half,
    lambda: Half,
    start: u64,
    in_spikes: Vec<bool>,
    active: Vec<usize>,
    pre: Option<TraceRmw>,
    v_rd_next: usize,
    v_old: Vec<Option<(u64, Word)>>,
    ps_tile: usize,
    ps_idx: usize,
    ps_ready: u64,
    acc: Word,
    psum: Vec<Option<(u64, Word)>>,
    nrn: Vec<Option<NeuronOut>>,
    nrn_next: usize,
    nrn_last_issue: Option<u64>,
    v_wr_next: usize,
    post: TraceRmw,
}

#[allow(clippy::too_many_arguments)]
impl ForwardRun {
    /// `timestep` is counted from when the banks were loaded; weight reads
    /// wait for that many committed plasticity updates. `pre_war` and
    /// `post_war` are the consumer counts the previous trace versions need
    /// before being overwritten.
    pub fn new(
        layer: usize,
        timestep: u64,
        layout: &Layout,
        hw: &HardwareConfig,
        v_th: Half,
        lambda: Half,
        in_spikes: Vec<bool>,
        owns_pre: bool,
        pre_war: Option<u32>,
        post_war: Option<u32>,
        start: u64,
    ) -> ForwardRun {
        assert_eq!(in_spikes.len(), layout.n_pre(layer));
        let tiles = layout.tiles(layer);
        let active = in_spikes
            .iter()
            .enumerate()
            .filter_map(|(j, &s)| s.then_some(j))
            .collect();
        ForwardRun {
            layer,
            timestep,
            lat: hw.into(),
            v_th,
            lambda,
            start,
            in_spikes,
            active,
            pre: owns_pre.then(|| TraceRmw::new(layout, layer, pre_war, true)),
            v_rd_next: 0,
            v_old: vec![None; tiles],
            ps_tile: 0,
            ps_idx: 0,
            ps_ready: start,
            acc: vec![Half::ZERO; layout.pe],
            psum: vec![None; tiles],
            nrn: (0..tiles).map(|_| None).collect(),
            nrn_next: 0,
            nrn_last_issue: None,
            v_wr_next: 0,
            post: TraceRmw::new(layout, layer + 1, post_war, false),
            layout: layout.clone(),
        }
    }

    fn tiles(&self) -> usize {
        self.v_old.len()
    }

    pub fn is_done(&self) -> bool {
        self.pre.as_ref().is_none_or(TraceRmw::done)
            && self.v_wr_next == self.tiles()
            && self.post.done()
    }

    pub fn out_spikes(&self) -> Vec<bool> {
        self.nrn
            .iter()
            .flat_map(|n| n.as_ref().expect("forward run incomplete").spikes.iter().copied())
            .collect()
    }

    /// Settles everything that does not need a memory grant.
    fn advance(&mut self) {
        while self.ps_tile < self.tiles() && self.ps_idx == self.active.len() {
            let acc = std::mem::replace(&mut self.acc, vec![Half::ZERO; self.layout.pe]);
            self.psum[self.ps_tile] = Some((self.ps_ready, acc));
            self.ps_tile += 1;
            self.ps_idx = 0;
            self.ps_ready = self.start;
        }
        while self.nrn_next < self.tiles() {
            let k = self.nrn_next;
            let (Some((p_ready, current)), Some((v_ready, v_old))) = (&self.psum[k], &self.v_old[k]) else {
                break;
            };
            let mut issue = (*p_ready).max(*v_ready);
            if let Some(last) = self.nrn_last_issue {
                issue = issue.max(last + 1);
            }
            let n = self.layout.valid_lanes(self.layer + 1, k);
            let mut v = v_old.clone();
            let mut spikes = Vec::with_capacity(n);
            for p in 0..n {
                let (v_next, s) = lif_step(v_old[p], current[p], self.v_th);
                v[p] = v_next;
                spikes.push(s);
            }
            self.nrn[k] = Some(NeuronOut {
                ready: issue + self.lat.neuron,
                v,
                spikes,
            });
            self.nrn_last_issue = Some(issue);
            self.nrn_next += 1;
        }
    }

    fn trace_requests(&self, rmw: &TraceRmw, rd: u8, wr: u8, stage: Stage, cycle: u64, out: &mut Vec<EngineRequest>) {
        if rmw.rd_next < rmw.old.len() {
            let addr = rmw.base + rmw.rd_next as u32;
            out.push(read(rd, stage, BankId::Trace, addr, None, false));
        }
        let w = rmw.wr_next;
        if w == rmw.old.len() {
            return;
        }
        let Some((old_ready, old)) = &rmw.old[w] else {
            return;
        };
        let (spikes, ready): (&[bool], u64) = if rmw.spikes_known {
            let lo = w * self.layout.pe;
            let hi = (lo + self.layout.pe).min(self.in_spikes.len());
            (&self.in_spikes[lo..hi], *old_ready)
        } else {
            let Some(n) = &self.nrn[w] else {
                return;
            };
            (&n.spikes, n.ready.max(*old_ready))
        };
        if cycle < ready + self.lat.trace {
            return;
        }
        let mut data = old.clone();
        for (p, &s) in spikes.iter().enumerate() {
            data[p] = trace_step(old[p], s, self.lambda);
        }
        let addr = rmw.base + w as u32;
        out.push(write(wr, stage, BankId::Trace, addr, data, rmw.min_consumers));
    }

    pub fn propose(&mut self, cycle: u64, out: &mut Vec<EngineRequest>) {
        self.advance();
        let l = self.layer as u8;
        if let Some(pre) = &self.pre {
            self.trace_requests(pre, S_PRE_RD, S_PRE_WR, Stage::PreTrace, cycle, out);
        }
        if self.v_rd_next < self.tiles() {
            out.push(read(S_V_RD, Stage::Potential, BankId::Potential(l), self.v_rd_next as u32, None, false));
        }
        if self.ps_tile < self.tiles() && self.ps_idx < self.active.len() {
            let addr = self.layout.weight_addr(self.layer, self.ps_tile, self.active[self.ps_idx]);
            out.push(read(S_PSUM, Stage::Psum, BankId::Weight(l), addr, Some(self.timestep), false));
        }
        if self.v_wr_next < self.tiles() {
            if let Some(n) = &self.nrn[self.v_wr_next] {
                if cycle >= n.ready {
                    let addr = self.v_wr_next as u32;
                    out.push(write(S_V_WR, Stage::Neuron, BankId::Potential(l), addr, n.v.clone(), None));
                }
            }
        }
        self.trace_requests(&self.post, S_POST_RD, S_POST_WR, Stage::PostTrace, cycle, out);
    }

    pub fn on_grant(&mut self, stream: u8, cycle: u64, data: Option<Word>) {
        let ready = cycle + self.lat.read;
        match stream {
            S_PRE_RD => {
                let pre = self.pre.as_mut().expect("pre trace stream");
                pre.old[pre.rd_next] = Some((ready, data.expect("read data")));
                pre.rd_next += 1;
            }
            S_PRE_WR => self.pre.as_mut().expect("pre trace stream").wr_next += 1,
            S_V_RD => {
                self.v_old[self.v_rd_next] = Some((ready, data.expect("read data")));
                self.v_rd_next += 1;
            }
            S_PSUM => {
                let w = data.expect("read data");
                for (a, &x) in self.acc.iter_mut().zip(&w) {
                    *a = fused_psum(*a, x, true);
                }
                self.ps_ready = ready + self.lat.add;
                self.ps_idx += 1;
            }
            S_V_WR => self.v_wr_next += 1,
            S_POST_RD => {
                self.post.old[self.post.rd_next] = Some((ready, data.expect("read data")));
                self.post.rd_next += 1;
            }
            S_POST_WR => self.post.wr_next += 1,
            _ => unreachable!("unknown forward stream {stream}"),
        }
    }
}

const S_FETCH: u8 = 0;
const S_COEFF: u8 = 1;
const S_W_RD: u8 = 2;
const S_W_WR: u8 = 3;

struct CoeffBuf {
    ready: u64,
    coeffs: Vec<Coefficients>,
}

/// One plasticity sweep over every synapse of one layer.
pub struct PlasticityRun {
    pub layer: usize,
    pub timestep: u64,
    layout: Layout,
    lat: Latencies,
    fetch: Vec<u32>,
    fetch_next: usize,
    fetch_ready: u64,
    pre_words: usize,
    pre_trace: Vec<Half>,
    post_trace: Vec<Half>,
    words: usize,
    c_word: usize,
    c_group: usize,
    coeff: BTreeMap<usize, CoeffBuf>,
    w_rd_next: usize,
    w_old: BTreeMap<usize, (u64, Word)>,
    wr_next: usize,
}

impl PlasticityRun {
    pub fn new(layer: usize, timestep: u64, layout: &Layout, hw: &HardwareConfig) -> PlasticityRun {
        let pre_words = layout.words(layer);
        let fetch = (0..pre_words)
            .map(|w| layout.trace_base[layer] + w as u32)
            .chain((0..layout.tiles(layer)).map(|w| layout.trace_base[layer + 1] + w as u32))
            .collect();
        PlasticityRun {
            layer,
            timestep,
            lat: hw.into(),
            fetch,
            fetch_next: 0,
            fetch_ready: 0,
            pre_words,
            pre_trace: vec![Half::ZERO; pre_words * layout.pe],
            post_trace: vec![Half::ZERO; layout.tiles(layer) * layout.pe],
            words: layout.weight_words(layer),
            c_word: 0,
            c_group: 0,
            coeff: BTreeMap::new(),
            w_rd_next: 0,
            w_old: BTreeMap::new(),
            wr_next: 0,
            layout: layout.clone(),
        }
    }

    pub fn is_done(&self) -> bool {
        self.wr_next == self.words
    }

    fn tile_of(&self, word: usize) -> usize {
        word / self.layout.n_pre(self.layer)
    }

    fn groups_of(&self, word: usize) -> usize {
        let n = self.layout.valid_lanes(self.layer + 1, self.tile_of(word));
        n.div_ceil(self.layout.lanes)
    }

    pub fn propose(&mut self, cycle: u64, out: &mut Vec<EngineRequest>) {
        let l = self.layer as u8;
        if self.fetch_next < self.fetch.len() {
            let addr = self.fetch[self.fetch_next];
            out.push(read(S_FETCH, Stage::TraceFetch, BankId::Trace, addr, Some(self.timestep + 1), true));
        }
        if self.c_word < self.words && self.c_word < self.wr_next + PLASTICITY_WINDOW {
            let addr = self.layout.coeff_addr(self.c_word, self.c_group);
            out.push(read(S_COEFF, Stage::Coeff, BankId::Coeff(l), addr, None, false));
        }
        if self.w_rd_next < self.words && self.w_rd_next < self.wr_next + PLASTICITY_WINDOW {
            out.push(read(S_W_RD, Stage::WeightRead, BankId::Weight(l), self.w_rd_next as u32, None, false));
        }
        if let Some(data) = self.next_write(cycle) {
            out.push(write(S_W_WR, Stage::WeightWrite, BankId::Weight(l), self.wr_next as u32, data, None));
        }
    }

    fn next_write(&self, cycle: u64) -> Option<Word> {
        let m = self.wr_next;
        if m == self.words || self.fetch_next < self.fetch.len() || self.c_word <= m {
            return None;
        }
        let c = &self.coeff[&m];
        let (w_ready, w_old) = self.w_old.get(&m)?;
        let operands = c.ready.max(self.fetch_ready);
        let ready = (operands + self.lat.delta).max(*w_ready) + self.lat.add + self.lat.writeback;
        if cycle < ready {
            return None;
        }
        let n_pre = self.layout.n_pre(self.layer);
        let (k, j) = (m / n_pre, m % n_pre);
        let s_pre = self.pre_trace[j];
        let mut data = w_old.clone();
        for (p, coeffs) in c.coeffs.iter().enumerate() {
            let s_post = self.post_trace[k * self.layout.pe + p];
            data[p] = w_old[p] + plasticity_delta(*coeffs, s_pre, s_post);
        }
        Some(data)
    }

    pub fn on_grant(&mut self, stream: u8, cycle: u64, data: Option<Word>) {
        let ready = cycle + self.lat.read;
        match stream {
            S_FETCH => {
                let word = data.expect("read data");
                let i = self.fetch_next;
                let pe = self.layout.pe;
                let (dst, w) = if i < self.pre_words {
                    (&mut self.pre_trace, i)
                } else {
                    (&mut self.post_trace, i - self.pre_words)
                };
                dst[w * pe..(w + 1) * pe].copy_from_slice(&word);
                self.fetch_next += 1;
                self.fetch_ready = ready;
            }
            S_COEFF => {
                let word = data.expect("read data");
                let m = self.c_word;
                let n = self.layout.valid_lanes(self.layer + 1, self.tile_of(m));
                let lanes = self.layout.lanes;
                let buf = self.coeff.entry(m).or_insert(CoeffBuf {
                    ready: 0,
                    coeffs: Vec::with_capacity(n),
                });
                buf.ready = buf.ready.max(ready);
                let first = self.c_group * lanes;
                for q in 0..lanes.min(n - first) {
                    let c = &word[q * 4..q * 4 + 4];
                    buf.coeffs.push(Coefficients {
                        alpha: c[0],
                        beta: c[1],
                        gamma: c[2],
                        delta: c[3],
                    });
                }
                self.c_group += 1;
                if self.c_group == self.groups_of(m) {
                    self.c_group = 0;
                    self.c_word += 1;
                }
            }
            S_W_RD => {
                self.w_old.insert(self.w_rd_next, (ready, data.expect("read data")));
                self.w_rd_next += 1;
            }
            S_W_WR => {
                self.coeff.remove(&self.wr_next);
                self.w_old.remove(&self.wr_next);
                self.wr_next += 1;
            }
            _ => unreachable!("unknown plasticity stream {stream}"),
        }
    }
}

/// A unit run of either kind.
pub enum Run {
    Forward(ForwardRun),
    Plasticity(PlasticityRun),
}

impl Run {
    pub fn propose(&mut self, cycle: u64, out: &mut Vec<EngineRequest>) {
        match self {
            Run::Forward(r) => r.propose(cycle, out),
            Run::Plasticity(r) => r.propose(cycle, out),
        }
    }

    pub fn on_grant(&mut self, stream: u8, cycle: u64, data: Option<Word>) {
        match self {
            Run::Forward(r) => r.on_grant(stream, cycle, data),
            Run::Plasticity(r) => r.on_grant(stream, cycle, data),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            Run::Forward(r) => r.is_done(),
            Run::Plasticity(r) => r.is_done(),
        }
    }
}
